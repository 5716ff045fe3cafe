"""Byte-deterministic prompt templates, referring expressions, and
multi-LLM knowledge-set merging.

The two block templates are fixed strings; the head text and the fixed
expansion in-context examples are editable configuration (see data/).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import DatasetSplit, EntityType, iter_jsonl
from .errors import DataError

KNOWLEDGE_QUESTION = (
    "Comprehensively analyze the Text and the Image, "
    "which named entities and their corresponding types are included in the Text? "
    "Explain the reason for your judgment."
)

EXPANSION_QUESTION = (
    "In the context of the provided information, "
    "tell me briefly what is the {entity} in the Text?"
)

CANONICAL_LLM = "gpt-3.5-turbo"

_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class AnnotatedExample:
    """One manually annotated in-context example."""

    sentence: str
    image_description: str
    annotation: str

    def __post_init__(self) -> None:
        for name in ("sentence", "image_description", "annotation"):
            if not getattr(self, name):
                raise ValueError(f"annotated example field {name!r} must be non-empty")


@dataclass(frozen=True)
class ExpansionExample:
    """One fixed in-context example for the expansion prompt."""

    background: str
    sentence: str
    entity: str
    expansion: str


@dataclass(frozen=True)
class ReferringExpression:
    entity: str
    etype: EntityType
    expansion: str
    rendered: str = field(init=False)

    def __post_init__(self) -> None:
        if not self.entity:
            raise ValueError("referring expression entity must be non-empty")
        expansion = _WS.sub(" ", self.expansion).strip()
        object.__setattr__(self, "expansion", expansion)
        if expansion:
            rendered = f"{self.entity} ({self.etype.value}) - {expansion}"
        else:
            rendered = f"{self.entity} ({self.etype.value})"
        object.__setattr__(self, "rendered", rendered)


def compose_referring_expression(
    entity: str, etype: EntityType, expansion: str = ""
) -> ReferringExpression:
    """"entity (TYPE) - expansion", or "entity (TYPE)" when expansion is empty."""
    return ReferringExpression(entity=entity, etype=etype, expansion=expansion)


_EXPR_RE = re.compile(r"^(?P<entity>.*?) \((?P<etype>PER|LOC|ORG|MISC)\)(?: - (?P<expansion>.*))?$")


def parse_referring_expression(rendered: str) -> ReferringExpression:
    """Inverse of compose_referring_expression on its image."""
    m = _EXPR_RE.match(rendered)
    if not m:
        raise DataError(f"unparseable referring expression {rendered!r}")
    return compose_referring_expression(
        m.group("entity"), EntityType(m.group("etype")), m.group("expansion") or ""
    )


def _knowledge_block(sentence: str, image_description: str, answer: str) -> str:
    block = (
        f"Text: {sentence}\n"
        f"Image: {image_description}\n"
        f"Question: {KNOWLEDGE_QUESTION}\n"
        f"Answer:"
    )
    if answer:
        block += f" {answer}"
    return block


def build_knowledge_prompt(
    head: str,
    examples: Sequence[AnnotatedExample],
    query_sentence: str,
    query_image_description: str,
) -> str:
    """Head, filled example blocks in similarity order, then the open query block."""
    blocks = []
    if head:
        blocks.append(head.rstrip("\n"))
    for ex in examples:
        blocks.append(_knowledge_block(ex.sentence, ex.image_description, ex.annotation))
    blocks.append(_knowledge_block(query_sentence, query_image_description, ""))
    return "\n\n".join(blocks) + "\n"


def _expansion_block(background: str, sentence: str, entity: str, answer: str) -> str:
    block = (
        f"Background: {background}\n"
        f"Text: {sentence}\n"
        f"Question: {EXPANSION_QUESTION.format(entity=entity)}\n"
        f"Answer:"
    )
    if answer:
        block += f" {answer}"
    return block


def build_expansion_prompt(
    background: str,
    sentence: str,
    entity: str,
    examples: Sequence[ExpansionExample] = (),
) -> str:
    """Fixed in-context examples, then the query block for one entity."""
    if entity not in sentence:
        raise DataError(f"entity {entity!r} does not occur in sentence {sentence!r}")
    blocks = [
        _expansion_block(ex.background, ex.sentence, ex.entity, ex.expansion)
        for ex in examples
    ]
    blocks.append(_expansion_block(background, sentence, entity, ""))
    return "\n\n".join(blocks) + "\n"


def load_expansion_examples(path: str | Path) -> list[ExpansionExample]:
    """Read the fixed expansion example set from JSONL."""
    out = []
    for line_no, obj in iter_jsonl(path):
        where = f"{path}:{line_no}"
        if not isinstance(obj, dict):
            raise DataError(f"{where}: expected an object")
        try:
            out.append(
                ExpansionExample(
                    background=str(obj["background"]),
                    sentence=str(obj["sentence"]),
                    entity=str(obj["entity"]),
                    expansion=str(obj["expansion"]),
                )
            )
        except KeyError as exc:
            raise DataError(f"{where}: missing field {exc}") from None
    return out


def load_annotated_examples(path: str | Path) -> dict[str, AnnotatedExample]:
    """Read annotated examples keyed by id from JSONL."""
    out: dict[str, AnnotatedExample] = {}
    for line_no, obj in iter_jsonl(path):
        where = f"{path}:{line_no}"
        if not isinstance(obj, dict) or "id" not in obj:
            raise DataError(f"{where}: expected an object with an id")
        try:
            out[str(obj["id"])] = AnnotatedExample(
                sentence=str(obj["sentence"]),
                image_description=str(obj["image_description"]),
                annotation=str(obj["annotation"]),
            )
        except KeyError as exc:
            raise DataError(f"{where}: missing field {exc}") from None
        except ValueError as exc:
            raise DataError(f"{where}: {exc}") from None
    return out


@dataclass(frozen=True)
class KnowledgeRecord:
    sample_id: str
    llm: str
    knowledge: str


def load_knowledge_sets(path: str | Path) -> dict[str, dict[str, str]]:
    """Read JSONL {"id","llm","knowledge"} into llm -> sample id -> text."""
    out: dict[str, dict[str, str]] = {}
    for line_no, obj in iter_jsonl(path):
        where = f"{path}:{line_no}"
        if not isinstance(obj, dict) or not {"id", "llm", "knowledge"} <= set(obj):
            raise DataError(f"{where}: expected an object with id, llm and knowledge")
        out.setdefault(str(obj["llm"]), {})[str(obj["id"])] = str(obj["knowledge"])
    return out


def merge_augmented(
    base: DatasetSplit,
    knowledge_sets: Mapping[str, Mapping[str, str]],
    target: str,
    canonical_llm: str = CANONICAL_LLM,
) -> list[KnowledgeRecord]:
    """Cross samples with LLM variants for train; canonical LLM only for dev/test.

    Record order is deterministic: sample order within the split, then LLM
    name. Unknown sample ids in any knowledge set are rejected.
    """
    if target not in ("train", "dev", "test"):
        raise DataError(f"target must be train, dev or test, got {target!r}")
    known = {s.id for s in base.samples}
    for llm, mapping in knowledge_sets.items():
        unknown = set(mapping) - known
        if unknown:
            raise DataError(
                f"knowledge set {llm!r} references unknown sample id(s): {sorted(unknown)[:5]}"
            )
    records: list[KnowledgeRecord] = []
    if target == "train":
        names = sorted(knowledge_sets)
        for sample in base.samples:
            for llm in names:
                mapping = knowledge_sets[llm]
                if sample.id in mapping:
                    records.append(KnowledgeRecord(sample.id, llm, mapping[sample.id]))
        return records
    if canonical_llm not in knowledge_sets:
        raise DataError(
            f"{target} split requires the canonical LLM {canonical_llm!r}, "
            f"got only {sorted(knowledge_sets)}"
        )
    mapping = knowledge_sets[canonical_llm]
    for sample in base.samples:
        if sample.id in mapping:
            records.append(KnowledgeRecord(sample.id, canonical_llm, mapping[sample.id]))
    return records


def default_knowledge_head() -> str:
    """Packaged head text; deployments may pass their own."""
    return (Path(__file__).parent / "data" / "knowledge_head.txt").read_text(encoding="utf-8")


def default_expansion_examples() -> list[ExpansionExample]:
    """Packaged fixed in-context examples for the expansion prompt."""
    return load_expansion_examples(Path(__file__).parent / "data" / "expansion_examples.jsonl")
