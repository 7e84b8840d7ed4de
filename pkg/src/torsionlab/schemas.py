"""JSON schemas for every document the package writes."""

import functools
import json
from importlib import resources

from jsonschema import Draft202012Validator

KINDS = ("constants", "summary", "report", "topology", "domain_spec", "solve_output",
         "audit_output", "corpus_output", "oracle_output", "sweep_output", "convergence_output")


@functools.lru_cache(maxsize=None)
def bundle() -> dict:
    text = resources.files(__package__).joinpath("schemas/torsionlab.schema.json").read_text()
    return json.loads(text)


@functools.lru_cache(maxsize=None)
def validator(kind: str) -> Draft202012Validator:
    if kind not in KINDS:
        raise KeyError(f"unknown schema {kind!r}; known: {KINDS}")
    schema = dict(bundle())
    schema["$ref"] = f"#/$defs/{kind}"
    return Draft202012Validator(schema)


def validate(kind: str, document) -> None:
    """Raise ``jsonschema.ValidationError`` if ``document`` does not match ``kind``."""
    validator(kind).validate(document)


def scenario_kind(document: dict) -> str:
    return {"corpus": "corpus_output", "oracle": "oracle_output", "punctured": "sweep_output",
            "dumbbell": "sweep_output", "convergence": "convergence_output"}[document["kind"]]
