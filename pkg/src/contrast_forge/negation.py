"""Negation-prompt construction and the repulsive preference gradient.

From a positive prompt this module extracts modifier-attribute pairs
(MAPs), ranks them by visual saliency, cyclically reassigns the
modifiers so every garment is described wrongly, flips left/right
placements, looks up confusable objects from the same lexical family,
and joins everything after a static list of quality defects. Scoring
the render against that text yields a gradient the trainer descends,
pushing the scene away from the failure modes the text describes.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources

import numpy as np

from .preference import score_all
from .prompts import default_template

logger = logging.getLogger(__name__)

STATIC_NEGATION_PHRASES = (
    "blurry", "oversaturated", "noisy", "lowres", "deformed",
    "extra limbs", "bad anatomy", "watermark", "text", "jpeg artifacts",
)

_FRAME_WORDS = frozenset({
    "a", "an", "the", "and", "wearing", "carrying", "with", "in",
})

# Garment nouns recognized outside the bundled prompt template, so
# free-form prompts still parse.
_EXTRA_GARMENTS = frozenset({
    "jacket", "coat", "shirt", "sweater", "dress", "skirt", "pants",
    "trousers", "shorts", "shoes", "boots", "sneakers", "heels", "cap",
    "hat", "scarf", "belt", "glove", "gloves", "watch", "bag", "tie",
    "socks", "vest", "hoodie", "jeans", "suit",
})

_SPATIAL_RE = re.compile(
    r"^(?P<body>.+?)\s+on\s+the\s+(?P<side>left|right)\s+"
    r"(?P<part>[a-z][a-z ]*?)\s*$"
)


@dataclass(frozen=True)
class ModifierAttributePair:
    modifier: str
    attribute: str
    spatial: str = "none"  # "left" | "right" | "none"
    part: str = ""         # body part for spatial placement
    span: tuple = (0, 0)   # character range in the source text

    def __post_init__(self):
        if not self.attribute:
            raise ValueError("attribute must be non-empty")
        if self.spatial not in ("left", "right", "none"):
            raise ValueError(f"bad spatial tag {self.spatial!r}")

    def render(self) -> str:
        return f"{self.modifier} {self.attribute}".strip()

    def render_spatial(self) -> str:
        if self.spatial == "none":
            return self.render()
        return f"{self.render()} on the {self.spatial} {self.part}"


@dataclass(frozen=True)
class NegationSet:
    static_phrases: tuple
    negated_maps: tuple
    spatial_reversals: tuple
    irrelevant: tuple
    y_neg: str
    warnings: tuple = ()


def _load_asset(name: str) -> dict:
    blob = resources.files("contrast_forge.assets").joinpath(name).read_text()
    return json.loads(blob)


@lru_cache(maxsize=1)
def saliency_lexicon() -> dict:
    return _load_asset("saliency_lexicon.json")


@lru_cache(maxsize=1)
def confusable_table() -> dict:
    return _load_asset("confusables.json")


class RuleLlmClient:
    """Deterministic stand-in for the language-model analysis hook.

    Saliency comes from a bundled modifier lexicon (saturated colors
    above muted colors above materials above fit adjectives); irrelevant
    elements come from a bundled confusable-object table.
    """

    def __init__(self, lexicon: dict | None = None,
                 confusables: dict | None = None):
        lex = lexicon if lexicon is not None else saliency_lexicon()
        table = (confusables if confusables is not None
                 else confusable_table())
        self._scores = dict(lex["modifiers"])
        self._default = float(lex.get("default_score", 0.1))
        self._confusables = dict(table["confusables"])

    def saliency(self, modifier: str) -> float:
        words = modifier.split()
        if not words:
            return 0.0
        return max(self._scores.get(w, self._default) for w in words)

    def irrelevant_for(self, attribute: str) -> list:
        return list(self._confusables.get(attribute, []))

    def analyze(self, prompt: str) -> dict:
        maps = extract_maps(prompt)
        ranked = rank_saliency(maps, self)
        return {
            "maps": [
                {
                    "modifier": m.modifier,
                    "attribute": m.attribute,
                    "spatial": m.spatial,
                    "saliency": self.saliency(m.modifier),
                }
                for m in ranked
            ],
            "irrelevant": irrelevant_elements(maps, self),
        }


@lru_cache(maxsize=1)
def _garment_lexicon() -> frozenset:
    return frozenset(default_template().garment_nouns()) | _EXTRA_GARMENTS


def _split_clauses(text: str) -> list:
    """Comma- then 'and'-separated spans with source positions."""
    clauses = []
    pos = 0
    for chunk in text.split(","):
        start = pos
        pos += len(chunk) + 1
        sub_pos = 0
        for part in re.split(r"\band\b", chunk):
            begin = start + sub_pos
            sub_pos += len(part) + 3
            stripped = part.strip()
            if stripped:
                offset = len(part) - len(part.lstrip())
                clauses.append((stripped, begin + offset))
    return clauses


def extract_maps(text: str) -> list:
    """Rule-based MAP extraction over comma/'and'-separated clauses.

    Within a clause the longest trailing garment noun is the attribute
    and everything before it (minus articles and frame words) is the
    modifier; "on the left/right <part>" sets the spatial tag. Clauses
    without a recognized garment noun are skipped.
    """
    garments = _garment_lexicon()
    maps = []
    for clause, start in _split_clauses(text.lower()):
        spatial, part = "none", ""
        match = _SPATIAL_RE.match(clause)
        body = clause
        if match:
            body = match.group("body")
            spatial = match.group("side")
            part = match.group("part")
        tokens = body.split()
        while tokens and tokens[0] in _FRAME_WORDS:
            tokens = tokens[1:]
        if not tokens:
            continue
        attribute = None
        for width in range(len(tokens), 0, -1):
            candidate = " ".join(tokens[-width:])
            if candidate in garments:
                attribute = candidate
                modifier = " ".join(tokens[:-width])
                break
        if attribute is None:
            continue
        maps.append(ModifierAttributePair(
            modifier=modifier, attribute=attribute,
            spatial=spatial, part=part,
            span=(start, start + len(clause)),
        ))
    return maps


def rank_saliency(maps: list, client=None) -> list:
    """Descending modifier saliency; ties broken by attribute text."""
    if client is None:
        client = RuleLlmClient()
    try:
        scores = [client.saliency(m.modifier) for m in maps]
    except Exception as exc:  # noqa: BLE001 - contract: fall back, warn
        logger.warning("saliency client failed (%s); using rule client", exc)
        fallback = RuleLlmClient()
        scores = [fallback.saliency(m.modifier) for m in maps]
    order = sorted(
        range(len(maps)), key=lambda i: (-scores[i], maps[i].attribute)
    )
    return [maps[i] for i in order]


def recombine_maps(maps: list) -> list:
    """Cyclically shift modifiers one step across the attribute sequence."""
    if len(maps) < 2:
        return list(maps)
    modifiers = [m.modifier for m in maps]
    shifted = modifiers[1:] + modifiers[:1]
    return [replace(m, modifier=mod) for m, mod in zip(maps, shifted)]


def reverse_spatial(pair: ModifierAttributePair) -> ModifierAttributePair:
    if pair.spatial == "left":
        return replace(pair, spatial="right")
    if pair.spatial == "right":
        return replace(pair, spatial="left")
    return pair


def irrelevant_elements(maps: list, client=None) -> list:
    """Confusable objects for each attribute, deduplicated in order."""
    if client is None:
        client = RuleLlmClient()
    found = []
    for pair in maps:
        try:
            candidates = client.irrelevant_for(pair.attribute)
        except Exception as exc:  # noqa: BLE001 - contract: fall back, warn
            logger.warning(
                "irrelevant-element client failed (%s); using rule client",
                exc,
            )
            candidates = RuleLlmClient().irrelevant_for(pair.attribute)
        for candidate in candidates:
            if candidate not in found:
                found.append(candidate)
    return found


def build_negation_set(
    prompt: str,
    client=None,
    static_phrases: tuple = STATIC_NEGATION_PHRASES,
) -> NegationSet:
    """Assemble Y_neg = static defects + recombined MAPs + side flips
    + confusable objects, in that construction order."""
    if len(static_phrases) == 0:
        raise ValueError("static negation list must be non-empty")
    if client is None:
        client = RuleLlmClient()
    warnings = []

    maps = extract_maps(prompt)
    try:
        ranked = rank_saliency(maps, client)
    except Exception as exc:  # noqa: BLE001
        warnings.append(f"saliency ranking fell back to rules: {exc}")
        ranked = rank_saliency(maps, RuleLlmClient())
    negated = recombine_maps(ranked)
    reversals = tuple(
        reverse_spatial(m).render_spatial()
        for m in maps if m.spatial != "none"
    )
    try:
        irrelevant = tuple(irrelevant_elements(maps, client))
    except Exception as exc:  # noqa: BLE001
        warnings.append(f"irrelevant elements fell back to rules: {exc}")
        irrelevant = tuple(irrelevant_elements(maps, RuleLlmClient()))

    pieces = (
        list(static_phrases)
        + [m.render() for m in negated]
        + list(reversals)
        + list(irrelevant)
    )
    return NegationSet(
        static_phrases=tuple(static_phrases),
        negated_maps=tuple(negated),
        spatial_reversals=reversals,
        irrelevant=irrelevant,
        y_neg=", ".join(pieces),
        warnings=tuple(warnings),
    )


def negative_preference_grad(
    scorers,
    image: np.ndarray,
    y_neg: str,
    literal_eq10: bool = False,
    retries: int = 2,
) -> np.ndarray:
    """Unweighted mean of negation-prompt gradients, sign-flipped.

    The flip makes the term repulsive: descending it reduces every
    scorer's preference for the negation text. ``literal_eq10`` keeps
    the raw averaged gradient instead (an attractive term), which
    exists for comparison runs and defaults off.
    """
    signals = score_all(scorers, image, y_neg, retries=retries)
    mean_grad = np.mean([s.gradient for s in signals], axis=0)
    return mean_grad if literal_eq10 else -mean_grad
