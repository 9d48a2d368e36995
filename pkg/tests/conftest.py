import json

import pytest

GEN_MCQ = json.dumps({
    "question": ("Which cellular response is most directly associated with "
                 "exposure to ionizing radiation?"),
    "options": [
        "Formation of DNA lesions that disrupt replication",
        "Increased chlorophyll synthesis",
        "Ribosome duplication without division",
        "Thickening of the outer cell wall",
        "Regeneration of flagellar structures",
        "Hardening of the insect cuticle",
        "Dormant spore formation",
    ],
    "answer": "A",
})

GEN_MCQ_BAD = json.dumps({
    "question": "Which of these is a mineral?",
    "options": ["Quartz", "Feldspar", "Mica", "Basalt"],
    "answer": "A",
})

TRACES_RESPONSE = "```json\n" + json.dumps({
    "detailed": ("Work through each option by asking what mechanism ionizing "
                 "radiation engages at the molecular level. Several options "
                 "describe plant, insect, or microbial structures that "
                 "mammalian cells do not possess, so they can be set aside. "
                 "The remaining options differ in whether they describe damage "
                 "or growth."),
    "focused": ("Key principle: irradiation transfers harmful energy to "
                "genetic material. Eliminate options describing growth or "
                "structures absent from animal cells."),
    "efficient": ("Radiation harms the genome; pick the damage-related "
                  "mechanism."),
}) + "\n```"

SCORE_GOOD = '```json\n{"relevance": {"passed": true, "reasoning": "on topic"}, "score": 9, "reasoning": "clear and educational"}\n```'
SCORE_LOW = '```json\n{"relevance": {"passed": true, "reasoning": "on topic"}, "score": 3, "reasoning": "weak distractors"}\n```'
JUDGE_ABSTAIN = '```json\n{"choice": "ABSTAIN", "reasoning": "no committed option"}\n```'
CLASSIFY_NO_MATH = '```json\n{"math_required": false, "reasoning": "recall only"}\n```'

# Markers unique to each prompt template.
M_GEN = "expert question writer"
M_SCORE = "reviewing a machine-generated multiple-choice question"
M_TRACES = "Write three reasoning traces"
M_JUDGE = "grading a model's answer"
M_CLASSIFY = "requires mathematical reasoning or arithmetic computation"
M_ANSWER = "Respond with the single letter of the correct option."

MOCK_RULES = [
    {"contains": [M_SCORE, "zebrafish"], "response": SCORE_LOW},
    {"contains": [M_SCORE], "response": SCORE_GOOD},
    {"contains": [M_GEN, "quartzite"], "response": GEN_MCQ_BAD},
    {"contains": [M_GEN], "response": "```json\n" + GEN_MCQ + "\n```"},
    {"contains": [M_TRACES], "response": TRACES_RESPONSE},
    {"contains": [M_JUDGE], "response": JUDGE_ABSTAIN},
    {"contains": [M_CLASSIFY], "response": CLASSIFY_NO_MATH},
    {"contains": [M_ANSWER], "response": "Answer: B"},
]

DOC_TEXTS = {
    "doc1_radiation.txt": (
        "Ionizing radiation deposits energy in living tissue. "
        "The dominant lesion is the double-strand break. "
        "Repair pathways compete to restore chromosome integrity. "
        "Misrepair produces translocations and cell death. "
        "Dose fractionation exploits differential repair capacity. "
        "Tumor cells often repair less efficiently than normal tissue."
    ),
    "doc2_oxygen.txt": (
        "Oxygen fixes radiation damage chemically. "
        "Hypoxic tumor regions resist radiotherapy. "
        "The oxygen enhancement ratio quantifies this effect. "
        "Reoxygenation between fractions improves tumor control. "
        "Hypoxia imaging guides dose painting strategies. "
        "Radiosensitizers mimic oxygen in hypoxic cells."
    ),
    "doc3_cellcycle.txt": (
        "Cells vary in radiosensitivity across the cycle. "
        "Mitotic cells are the most sensitive. "
        "Late S phase confers relative resistance. "
        "Checkpoint signaling pauses progression after damage. "
        "Synchronization effects shape fractionation response. "
        "Cyclin-dependent kinases govern these transitions."
    ),
    "doc4_zebrafish.txt": (
        "Zebrafish embryos model vertebrate radiosensitivity. "
        "The zebrafish genome supports rapid mutant screens. "
        "Transparent zebrafish larvae permit live imaging. "
        "Zebrafish fin regeneration is radiation sensitive. "
        "Zebrafish studies complement rodent experiments. "
        "The zebrafish community shares standardized protocols."
    ),
    "doc5_quartzite.txt": (
        "Dosimeters embedded in quartzite record cumulative exposure. "
        "Quartzite luminescence underpins retrospective dosimetry. "
        "Heating quartzite resets the stored signal. "
        "Quartzite samples calibrate accident reconstruction. "
        "Field surveys collect quartzite near legacy sites. "
        "Laboratory protocols anneal quartzite between readings."
    ),
}


def build_run_inputs(root):
    """Create the 5-document mock corpus, scripted mock file, and run config
    under `root`; returns the config path."""
    corpus_dir = root / "corpus"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    for name, text in DOC_TEXTS.items():
        (corpus_dir / name).write_text(text, encoding="utf-8")

    mock_path = root / "mock.json"
    mock_path.write_text(json.dumps({"rules": MOCK_RULES}, indent=1),
                         encoding="utf-8")

    config = {
        "corpus": {"root": "corpus", "format": "text_dir"},
        "chunking": {"min_tokens": 20, "max_tokens": 120, "window": 2,
                     "breakpoint_percentile": 25},
        "embedding": {"backend": "deterministic_test", "dim": 16, "seed": 7},
        "gateway": {"backend": "scripted_mock", "mock_file": "mock.json",
                    "max_in_flight": 4},
        "models": {
            "generator": "gen-model",
            "teacher": "teacher-model",
            "judge": "judge-model",
            "classifier": "classifier-model",
            "answer_models": [{"id": "slm-small", "context_window": 2048}],
        },
        "mcq": {"threshold": 7},
        "retrieval": {"k": 2},
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=1), encoding="utf-8")
    return config_path


@pytest.fixture
def run_inputs(tmp_path):
    return build_run_inputs(tmp_path)
