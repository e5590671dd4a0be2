"""Shipped view prompts."""
from ..errors import InputError

RETRIEVAL_PROMPT = "biochemical properties and functions"

PROPERTY_PROMPTS = {
    "bbbp": "blood-brain barrier penetration (permeability)",
    "tox21": "Qualitative toxicity measurements including nuclear receptors and stress response pathways",
    "toxcast": "Qualitative toxicity measurements",
    "sider": "adverse drug reactions (ADR) for 27 system organ classes",
    "clintox": "Qualitative data of drugs if they failed clinical trials for toxicity reasons",
    "muv": "Subset of PubChem BioAssay designed for validation of virtual screening techniques",
    "hiv": "Experimentally measured abilities to inhibit HIV replication",
    "bace": "Binding results for human β-secretase 1 (BACE-1)",
}

PRESETS = {**PROPERTY_PROMPTS, "retrieval": RETRIEVAL_PROMPT, "caption": RETRIEVAL_PROMPT}


def preset(name):
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise InputError(f"unknown prompt preset {name!r}; known: {', '.join(sorted(PRESETS))}") from None


def resolve_prompt(value):
    """``@name`` looks up a preset, anything else is used verbatim (empty means no prompt)."""
    if value and value.startswith("@"):
        return preset(value[1:])
    return value or ""
