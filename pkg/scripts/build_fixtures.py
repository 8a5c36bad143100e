"""Regenerate the replay fixtures under ``fixtures/``.

The replies are authored by hand and keyed by request digest, so a fixture
goes stale whenever a template, the default model id or the temperature
changes. Rerun this script after such a change:

    python3 scripts/build_fixtures.py
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from geneus.ingest import SourceDocument, extract_text
from geneus.promptkit import ModelRequest
from geneus.provider import CallbackProvider, Fixture, RecordProvider
from geneus.schema import parse_llm_json
from geneus.storygen import Templates, extract_requirements, run_pipeline

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
SAMPLE_STORY = ROOT / "tests" / "data" / "sample_story.json"

INSULIN_REFINED = (
    "Diabetics currently measure their blood sugar with an external meter and then work out and inject "
    "an insulin dose themselves. Too much insulin causes very low blood glucose, which can lead to brain "
    "malfunction, unconsciousness and death. Too little insulin causes high blood glucose, which over "
    "time damages the eyes, kidneys and heart. Miniaturized sensors now make an automated insulin delivery "
    "system possible. The system monitors the user's blood sugar level with a sensor and delivers an "
    "appropriate dose of insulin when it is required."
)

INSULIN_RAT = {
    "functional": [
        "The system must collect real-time data from a sensor to monitor blood sugar levels.",
        "The software must calculate the required amount of insulin based on the current blood sugar level.",
        "The system should be able to control the insulin pump to deliver the calculated dose of insulin to the user.",
        "The software must have mechanisms in place to ensure the correct amount of insulin is delivered accurately.",
        "The system should be able to send signals to the pump promptly when insulin delivery is required.",
        "The software must have fail-safe mechanisms to prevent over or under delivery of insulin.",
        "The system should provide alerts or notifications to the user in case of any issues or failures in the insulin delivery process.",
        "The software must be designed to operate reliably to ensure the health and safety of the user.",
        "The system should have backup systems in place to ensure continuous operation in case of any failures.",
    ],
    "nonfunctional": [],
}

INSULIN_IO = {
    "functional": [
        "The system shall collect information from a sensor to monitor blood sugar levels.",
        "The system shall calculate the required dose of insulin based on the blood sugar level and time since the last insulin injection.",
        "The system shall control the pump to deliver the calculated dose of insulin to the user.",
        "The system shall ensure that the pump delivers the correct amount of insulin in response to the controller's signals.",
        "The system shall be able to deliver insulin in units, with each unit corresponding to a single pulse from the controller.",
    ],
    "nonfunctional": [
        "The system shall be available to deliver insulin when required to the user.",
        "The system shall perform reliably to maintain the user's blood sugar levels within a safe range.",
        "The system shall be designed and implemented to ensure the safety of the user's health by preventing incorrect insulin delivery.",
    ],
}

MENTCARE_REFINED = (
    "MentCare is a patient information system for mental health care. It keeps records of patients with "
    "mental health problems and of their treatments, and is used by clinicians, doctors, nurses and "
    "receptionists in clinics. Clinics may work without a network connection, using local copies of "
    "patient records. The system gives doctors summaries of patient problems and treatments, monitors "
    "patients in treatment and warns when problems are detected, tracks sectioned patients and the legally "
    "required checks, and produces monthly management reports. Patient information must stay confidential "
    "and be disclosed only to authorized medical staff and the patient. Staff decisions must be recorded "
    "for judicial review. The system should warn staff about suicidal or dangerous patients and must be "
    "available when needed, including during server failure or network disconnection."
)

MENTCARE_REQUIREMENTS = {
    "functional": [
        "The system should allow clinicians to create, edit, and view patient records.",
        "The system must give doctors a summary of each patient's key problems and prescribed treatments.",
        "The system must monitor patients in treatment and warn clinicians when a patient has not seen a doctor for some time.",
        "The system must track sectioned patients and remind staff when legally required checks are due.",
        "The system must generate monthly management reports on patients treated, patients sectioned and drugs prescribed with their costs.",
        "The system must let clinics download patient records and use them while disconnected from the network.",
        "The system should warn medical staff about potentially suicidal or dangerous patients.",
    ],
    "nonfunctional": [
        "The system must disclose patient information only to authorized medical staff and the patient.",
        "The system must record staff decisions so that they are available for judicial review.",
        "The system must remain available during server failure or network disconnection.",
    ],
}

# who, capability, benefit for every MentCare requirement after the first,
# whose story is the published sample
MENTCARE_STORIES = {
    "R2": ("doctor", "see a summary of a patient's key problems and treatments", "I can treat patients I have not met before"),
    "R3": ("nurse", "be warned when a patient has not seen a doctor for some time", "no patient drops out of care unnoticed"),
    "R4": ("administrator", "be reminded when legal checks for a sectioned patient are due", "the clinic stays within the law"),
    "R5": ("manager", "receive a monthly report of patients, sections and drug costs", "I can plan clinic resources"),
    "R6": ("clinician", "work on downloaded patient records while offline", "I can keep treating patients at remote clinics"),
    "R7": ("nurse", "be alerted about suicidal or dangerous patients", "I can protect patients and staff"),
    "R8": ("patient", "have my records shown only to authorized staff and me", "my privacy is protected"),
    "R9": ("doctor", "have my treatment decisions recorded", "they can be reviewed by a court if needed"),
    "R10": ("receptionist", "reach the records during a server or network failure", "appointments can go ahead"),
}

INSULIN_STORIES = {
    "R1": ("patient", "my blood sugar measured continuously by a sensor", "I no longer rely on manual meter readings"),
    "R2": ("patient", "the insulin dose worked out from my current blood sugar", "I do not have to calculate it myself"),
    "R3": ("patient", "the pump to deliver the calculated dose", "my blood sugar stays in a safe range"),
    "R4": ("doctor", "the delivered amount of insulin to be checked", "patients never receive a wrong dose"),
    "R5": ("patient", "the pump to be signalled as soon as insulin is needed", "doses are never late"),
    "R6": ("doctor", "fail-safe limits on insulin delivery", "over or under delivery cannot happen"),
    "R7": ("patient", "an alert when insulin delivery fails", "I can act before my health is at risk"),
    "R8": ("patient", "the system to keep working reliably", "my health and safety are protected"),
    "R9": ("administrator", "a backup system that takes over after a failure", "insulin delivery never stops"),
}

_LINE = re.compile(r"^(R[0-9]+) \((functional|nonfunctional)\): (.+)$")


def _requirements_from_prompt(text: str) -> list[tuple[str, str]]:
    return [(m.group(1), m.group(3)) for m in map(_LINE.match, text.splitlines()) if m]


def _capability(requirement: str) -> str:
    body = re.sub(r"^The (?:system|software) (?:must|shall|should)(?: be able to)? ", "", requirement)
    return body.rstrip(".")


def test_cases_reply(requirements: list[tuple[str, str]]) -> str:
    cases = []
    for n, (rid, text) in enumerate(requirements, 1):
        capability = _capability(text)
        cases.append(
            {
                "id": f"T{n}",
                "story_ref": rid,
                "title": f"Check that the system can {capability}",
                "preconditions": ["The system is installed in a test environment with sample data"],
                "steps": [
                    f"Set up a scenario that needs the system to {capability}",
                    "Run the scenario and record the system output",
                    "Compare the output with the requirement",
                ],
                "expected": f"The system does {capability} as the requirement states.",
                "kind": "functional",
            }
        )
    return json.dumps(cases, indent=2)


def _deliverables(capability: str) -> dict:
    return {
        "architecture_design": {
            "definition_of_done": f"Architecture design for the feature to {capability} is documented and reviewed by the team.",
            "criteria": ["Design document stored in the project repository", "Design reviewed and approved by the team"],
        },
        "database_schema_design": {
            "definition_of_done": f"Database schema changes needed to {capability} are designed and applied.",
            "criteria": ["Schema changes documented", "Migration applied and verified on a test database"],
        },
        "unit_tests": {
            "definition_of_done": f"Unit tests for the feature to {capability} are written and passing in the build.",
            "criteria": ["Tests cover normal and failure cases", "Tests run in the automated build"],
        },
        "user_training_documentation": {
            "definition_of_done": f"Users have written guidance that explains how to {capability}.",
            "criteria": ["Guide reviewed by a representative user", "Guide published where staff can find it"],
        },
        "production_support_plan": {
            "definition_of_done": f"Support staff have a plan for keeping the feature to {capability} running in production.",
            "criteria": ["Monitoring and alerting defined", "Escalation path agreed with the operations team"],
        },
    }


def stories_reply(requirements: list[tuple[str, str]], authored: dict, sample: dict | None) -> str:
    stories = []
    for rid, text in requirements:
        if rid == "R1" and sample is not None:
            stories.append({**sample, "requirement_refs": ["R1"]})
            continue
        who, what, why = authored[rid]
        stories.append(
            {
                "User Story": f"As a {who}, I want {what}, so that {why}.",
                "who": who,
                "what": what,
                "why": why,
                "requirement_refs": [rid],
                "Deliverables": _deliverables(_capability(text)),
            }
        )
    return json.dumps(stories, indent=2)


def make_responder(templates: Templates, raw_text: str, refined: str, rat: dict, io: dict | None, authored: dict, sample: dict | None):
    def respond(request: ModelRequest) -> str:
        system, user = request.messages[0].content, request.messages[-1].content
        if system == templates.refine.instruction:
            # requirement lists are already clean, so refining keeps them as they are
            return refined if user == raw_text else user
        if system == templates.requirements.instruction:
            if user == refined:
                return json.dumps(rat, indent=2)
            if user == raw_text and io is not None:
                return json.dumps(io, indent=2)
        if system == templates.test_cases.instruction:
            return test_cases_reply(_requirements_from_prompt(user))
        if system == templates.stories.instruction:
            return stories_reply(_requirements_from_prompt(user), authored, sample)
        raise KeyError(f"no authored reply for request starting {system[:40]!r}")

    return respond


def build(name: str, source: Path, refined: str, rat: dict, io: dict | None, authored: dict, sample: dict | None) -> Path:
    templates = Templates.load()
    doc = SourceDocument.from_path(source)
    raw_text = extract_text(doc).text
    out = FIXTURES / f"{name}.fixture.json"
    fixture = Fixture(path=out)
    recorder = RecordProvider(CallbackProvider(make_responder(templates, raw_text, refined, rat, io, authored, sample)), fixture)
    result = run_pipeline(doc, recorder)
    if io is not None:
        extract_requirements(extract_text(doc), recorder, mode="io")
    fixture.save(out)
    print(f"{out.name}: {len(fixture)} replies, {len(result.stories)} stories")
    return out


def main() -> None:
    FIXTURES.mkdir(exist_ok=True)
    sample = parse_llm_json(SAMPLE_STORY.read_text(encoding="utf-8"))
    build("insulin", FIXTURES / "insulin.txt", INSULIN_REFINED, INSULIN_RAT, INSULIN_IO, INSULIN_STORIES, None)
    build("mentcare", FIXTURES / "mentcare.md", MENTCARE_REFINED, MENTCARE_REQUIREMENTS, None, MENTCARE_STORIES, sample)


if __name__ == "__main__":
    main()
