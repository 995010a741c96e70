"""Group-term detection and counterfactual prompt rewriting by lexicon substitution."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

# Letter-boundary tokens; hyphenated compounds ("darker-skinned") are single tokens.
_WORD_RE = re.compile(r"[A-Za-z]+(?:-[A-Za-z]+)*")

_VOWELS = "aeiouAEIOU"


class _Ambiguous:
    """Sentinel for prompts containing terms from more than one group."""

    def __repr__(self) -> str:  # pragma: no cover - repr only
        return "AMBIGUOUS"


AMBIGUOUS = _Ambiguous()


@dataclass(frozen=True)
class GroupLexicon:
    """Per-group surface forms plus a total term substitution map per group pair.

    ``terms`` maps each group id to its lowercase surface forms. ``mapping``
    maps each ordered (source, target) group pair to a term-to-term dict that
    covers every source term and lands inside the target group's term list.
    """

    groups: tuple[str, ...]
    terms: Mapping[str, tuple[str, ...]]
    mapping: Mapping[tuple[str, str], Mapping[str, str]]

    def __post_init__(self) -> None:
        seen: dict[str, str] = {}
        for group in self.groups:
            for term in self.terms.get(group, ()):
                if term != term.lower():
                    raise ValueError(f"lexicon terms must be lowercase: {term!r}")
                if term in seen:
                    raise ValueError(f"term {term!r} appears in groups {seen[term]!r} and {group!r}")
                seen[term] = group
        for src in self.groups:
            for dst in self.groups:
                if src == dst:
                    continue
                pair_map = self.mapping.get((src, dst))
                if pair_map is None:
                    raise ValueError(f"missing substitution map for pair ({src!r}, {dst!r})")
                missing = set(self.terms[src]) - set(pair_map)
                if missing:
                    raise ValueError(f"substitution map ({src!r} -> {dst!r}) misses terms {sorted(missing)}")
                stray = set(pair_map.values()) - set(self.terms[dst])
                if stray:
                    raise ValueError(f"substitution map ({src!r} -> {dst!r}) targets non-{dst!r} terms {sorted(stray)}")

    @classmethod
    def from_pairs(cls, group_a: str, group_b: str, pairs: Sequence[tuple[str, str]]) -> "GroupLexicon":
        """Build a two-group lexicon from aligned term pairs (bidirectional)."""
        terms = {group_a: tuple(a for a, _ in pairs), group_b: tuple(b for _, b in pairs)}
        mapping = {
            (group_a, group_b): {a: b for a, b in pairs},
            (group_b, group_a): {b: a for a, b in pairs},
        }
        return cls(groups=(group_a, group_b), terms=terms, mapping=mapping)


BINARY_GENDER = GroupLexicon.from_pairs(
    "woman",
    "man",
    [
        ("woman", "man"),
        ("women", "men"),
        ("female", "male"),
        ("she", "he"),
        ("her", "him"),
        ("hers", "his"),
        ("lady", "gentleman"),
        ("girl", "boy"),
    ],
)

BUILTIN_LEXICONS: Mapping[str, GroupLexicon] = {"builtin:binary_gender": BINARY_GENDER}


def word_tokens(text: str) -> list[tuple[int, int, str]]:
    """All letter-boundary word tokens as (start, end, surface) triples."""
    return [(m.start(), m.end(), m.group(0)) for m in _WORD_RE.finditer(text)]


def detect_group(prompt: str, lexicon: GroupLexicon) -> str | None | _Ambiguous:
    """Return the unique group whose terms occur in the prompt.

    None when no term occurs; AMBIGUOUS when terms from two or more groups do.
    Matching is whole-word and case-insensitive.
    """
    found: set[str] = set()
    term_to_group = {t: g for g in lexicon.groups for t in lexicon.terms[g]}
    for _, _, token in word_tokens(prompt):
        group = term_to_group.get(token.lower())
        if group is not None:
            found.add(group)
    if not found:
        return None
    if len(found) > 1:
        return AMBIGUOUS
    return found.pop()


def _match_case(template: str, replacement: str) -> str:
    if template.isupper() and len(template) > 1:
        return replacement.upper()
    if template[0].isupper():
        return replacement[0].upper() + replacement[1:]
    return replacement


def _article_for(word: str) -> str:
    return "an" if word and word[0] in _VOWELS else "a"


def rewrite_prompt(prompt: str, source_group: str, target_group: str, lexicon: GroupLexicon) -> str:
    """Produce the counterfactual prompt for ``target_group``.

    Every source-group term is replaced by its mapped target term with the
    original token's capitalization (initial-capital / ALL-CAPS) preserved.
    An immediately preceding indefinite article is re-fitted to the new word;
    everything else is byte-identical. The prompt's detected group must equal
    ``source_group``.
    """
    detected = detect_group(prompt, lexicon)
    if detected != source_group:
        raise ValueError(
            f"prompt group is {detected!r}, expected {source_group!r}: {prompt!r}"
        )
    if source_group == target_group:
        return prompt
    pair_map = lexicon.mapping[(source_group, target_group)]

    tokens = word_tokens(prompt)
    replacements: list[str | None] = []
    for _, _, surface in tokens:
        mapped = pair_map.get(surface.lower())
        replacements.append(None if mapped is None else _match_case(surface, mapped))

    # Articles are re-fitted only when the very next word token was substituted.
    for i, (_, _, surface) in enumerate(tokens):
        if surface.lower() in ("a", "an") and i + 1 < len(tokens) and replacements[i + 1] is not None:
            replacements[i] = _match_case(surface, _article_for(replacements[i + 1]))

    pieces: list[str] = []
    cursor = 0
    for (start, end, _), replacement in zip(tokens, replacements):
        if replacement is None:
            continue
        pieces.append(prompt[cursor:start])
        pieces.append(replacement)
        cursor = end
    pieces.append(prompt[cursor:])
    return "".join(pieces)


def insert_group_adjective(prompt: str, adjective: str, person_terms: Iterable[str]) -> str:
    """Insert a group adjective before the first person-noun token.

    Used for groups with no surface form in source captions (e.g. skin tone):
    "A woman with a dog" + "darker-skinned" -> "A darker-skinned woman with a
    dog". The preceding indefinite article, if any, is re-fitted to the
    adjective.
    """
    wanted = {t.lower() for t in person_terms}
    tokens = word_tokens(prompt)
    for i, (start, _, surface) in enumerate(tokens):
        if surface.lower() not in wanted:
            continue
        if i == 0 and surface[0].isupper() and not surface.isupper():
            # The noun held the prompt-initial capital; the adjective takes it over.
            demoted = surface[0].lower() + surface[1:]
            return _match_case(surface, adjective) + " " + demoted + prompt[start + len(surface):]
        out = prompt[:start] + adjective + " " + prompt[start:]
        if i > 0 and tokens[i - 1][2].lower() in ("a", "an"):
            a_start, a_end, a_surface = tokens[i - 1]
            article = _match_case(a_surface, _article_for(adjective))
            out = out[:a_start] + article + out[a_end:]
        return out
    raise ValueError(f"no person term found in prompt: {prompt!r}")


def parse_lexicon(text: str) -> GroupLexicon:
    """Parse the lexicon file format.

    One block per group: a ``group <id>`` line followed by
    ``term <src> -> <dst>[, <dst2> ...]`` lines, with one destination per
    *other* group in declaration order. Blank lines and ``#`` comments are
    skipped.
    """
    groups: list[str] = []
    term_lines: dict[str, list[tuple[str, list[str]]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("group "):
            current = line[len("group "):].strip()
            if current in groups:
                raise ValueError(f"line {lineno}: duplicate group {current!r}")
            groups.append(current)
            term_lines[current] = []
        elif line.startswith("term "):
            if current is None:
                raise ValueError(f"line {lineno}: term before any group")
            body = line[len("term "):]
            if "->" not in body:
                raise ValueError(f"line {lineno}: expected 'term <src> -> <dst>'")
            src, dsts = body.split("->", 1)
            targets = [d.strip() for d in dsts.split(",")]
            term_lines[current].append((src.strip(), targets))
        else:
            raise ValueError(f"line {lineno}: unrecognized lexicon line {line!r}")
    if len(groups) < 2:
        raise ValueError("lexicon needs at least 2 groups")

    terms = {g: tuple(src for src, _ in term_lines[g]) for g in groups}
    mapping: dict[tuple[str, str], dict[str, str]] = {}
    for g in groups:
        others = [o for o in groups if o != g]
        for src, targets in term_lines[g]:
            if len(targets) != len(others):
                raise ValueError(
                    f"term {src!r} in group {g!r} needs {len(others)} destination(s), got {len(targets)}"
                )
            for other, dst in zip(others, targets):
                mapping.setdefault((g, other), {})[src] = dst
    return GroupLexicon(groups=tuple(groups), terms=terms, mapping=mapping)


def load_lexicon(ref: str | Path) -> GroupLexicon:
    """Resolve a lexicon reference: a ``builtin:`` name or a lexicon file path."""
    if isinstance(ref, str) and ref in BUILTIN_LEXICONS:
        return BUILTIN_LEXICONS[ref]
    return parse_lexicon(Path(ref).read_text(encoding="utf-8"))
