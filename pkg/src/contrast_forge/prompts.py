"""Template-driven generator for long human-description prompts.

A fixed sentence frame with eight attribute slots (age, region, gender,
body build, upper/lower clothing, shoes, accessory) is filled from
bundled value pools. Generated text is unique per slot assignment,
seeded, and shaped so the negation extractor parses it exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import CapacityError, InvalidParameterError

_VOWELS = "aeiou"
_GARMENT_SLOTS = ("upper", "lower", "shoes")


@dataclass(frozen=True)
class AccessoryItem:
    noun: str
    part: str = ""
    spatial: bool = False


@dataclass(frozen=True)
class PromptTemplate:
    frame: str
    pools: dict

    def __post_init__(self):
        for name, pool in self.pools.items():
            if len(pool) == 0:
                raise InvalidParameterError(f"slot pool '{name}' is empty")

    def accessory_items(self) -> list:
        items = []
        for entry in self.pools["accessory"]:
            if isinstance(entry, AccessoryItem):
                items.append(entry)
            elif isinstance(entry, str):
                items.append(AccessoryItem(noun=entry))
            else:
                items.append(AccessoryItem(
                    noun=entry["noun"],
                    part=entry.get("part", ""),
                    spatial=bool(entry.get("spatial", False)),
                ))
        return items

    def combination_count(self) -> int:
        total = 1
        for name, pool in self.pools.items():
            if name == "accessory":
                total *= sum(
                    2 if item.spatial else 1
                    for item in self.accessory_items()
                )
            else:
                total *= len(pool)
        return total

    def garment_nouns(self) -> set:
        nouns = set()
        for slot in _GARMENT_SLOTS:
            nouns.update(self.pools[slot])
        nouns.update(item.noun for item in self.accessory_items())
        return nouns


@dataclass(frozen=True)
class PromptRecord:
    id: str
    text: str
    slots: dict = field(hash=False)
    seed: int = 0


@lru_cache(maxsize=1)
def default_template() -> PromptTemplate:
    blob = resources.files("contrast_forge.assets").joinpath(
        "prompt_template.json"
    ).read_text()
    data = json.loads(blob)
    return PromptTemplate(frame=data["frame"], pools=data["pools"])


def _article(phrase: str) -> str:
    return "an" if phrase[0].lower() in _VOWELS else "a"


def render_prompt(template: PromptTemplate, slots: dict) -> str:
    """Fill the sentence frame from one slot assignment."""
    upper = f"{slots['upper_modifier']} {slots['upper']}"
    lower = f"{slots['lower_modifier']} {slots['lower']}"
    shoes = f"{slots['shoes_modifier']} {slots['shoes']}"
    accessory = f"{slots['accessory_modifier']} {slots['accessory']}"
    if slots.get("accessory_side"):
        accessory += (
            f" on the {slots['accessory_side']} {slots['accessory_part']}"
        )
    person = f"{slots['age']} {slots['region']} {slots['gender']}"
    return template.frame.format(
        person_phrase=f"{_article(person)} {person}",
        body_phrase=f"{_article(slots['body'])} {slots['body']}",
        upper_phrase=f"{_article(upper)} {upper}",
        lower_phrase=lower,
        shoes_phrase=shoes,
        accessory_phrase=f"{_article(accessory)} {accessory}",
    )


def _draw_slots(template: PromptTemplate, rng: np.random.Generator) -> dict:
    slots = {}
    for name in ("age", "region", "gender", "body",
                 "upper_modifier", "upper", "lower_modifier", "lower",
                 "shoes_modifier", "shoes", "accessory_modifier"):
        pool = template.pools[name]
        slots[name] = pool[int(rng.integers(len(pool)))]
    items = template.accessory_items()
    item = items[int(rng.integers(len(items)))]
    slots["accessory"] = item.noun
    if item.spatial:
        slots["accessory_part"] = item.part
        slots["accessory_side"] = ("left", "right")[int(rng.integers(2))]
    else:
        slots["accessory_part"] = ""
        slots["accessory_side"] = ""
    return slots


def generate_corpus(template: PromptTemplate, n: int, seed: int) -> list:
    """n distinct seeded prompts via rejection-sampling deduplication."""
    if n < 0:
        raise InvalidParameterError("n must be >= 0")
    capacity = template.combination_count()
    if n > capacity:
        raise CapacityError(
            f"requested {n} prompts but the template only has "
            f"{capacity} distinct slot combinations"
        )
    rng = np.random.default_rng(np.random.SeedSequence([815001, seed]))
    records = []
    seen = set()
    attempts = 0
    budget = 200 * max(n, 1) + 10_000
    while len(records) < n:
        if attempts > budget:
            raise CapacityError(
                f"could not realize {n} unique prompts in {budget} draws "
                f"(space {capacity})"
            )
        attempts += 1
        slots = _draw_slots(template, rng)
        text = render_prompt(template, slots)
        if text in seen:
            continue
        seen.add(text)
        records.append(PromptRecord(
            id=f"prompt-{len(records):04d}", text=text,
            slots=slots, seed=seed,
        ))
    return records


def sample_eval_subset(corpus: list, k: int, seed: int) -> list:
    """Uniform subset without replacement, order given by the draw."""
    if k > len(corpus):
        raise InvalidParameterError(
            f"cannot sample {k} from a corpus of {len(corpus)}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([815002, seed]))
    idx = rng.choice(len(corpus), size=k, replace=False)
    return [corpus[int(i)] for i in idx]


def save_corpus(records: list, path) -> None:
    payload = [
        {"id": r.id, "text": r.text, "slots": r.slots, "seed": r.seed}
        for r in records
    ]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_corpus(path) -> list:
    with open(path) as fh:
        payload = json.load(fh)
    return [PromptRecord(**item) for item in payload]
