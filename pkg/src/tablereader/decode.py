"""Dictionary-constrained decoding, committee voting, and cross-field
consistency postprocessing.

The cost of dictionary entry w on output matrix m is

    cost(w) = (-ln p(w|m)) / |w|**alpha - beta * ln p(w)

where p(w|m) is the exact CTC path sum, |w| the symbol count, and p(w) a
smoothed relative frequency.  A committee takes the minimum of this cost
over its member matrices.  Ties break lexicographically on the word,
then by the lowest member index.
"""

from dataclasses import dataclass, field

import numpy as np

from .ctc import ctc_neg_log_prob
from .netcore import Alphabet


@dataclass(frozen=True)
class DecodeParams:
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValueError("alpha and beta must be finite")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")


@dataclass(frozen=True)
class ScoredWord:
    word: str
    cost: float
    member: int = 0


class Dictionary:
    """Word list with counts and smoothed prior probabilities.

    Counts are scale-normalized before add-one smoothing,
    p(w) = (count_w / total + 1) / (V + 1), so that multiplying every
    count by a positive constant leaves every prior (hence every cost)
    unchanged while zero-count entries keep a positive prior."""

    def __init__(self, pairs, alphabet: Alphabet):
        counts: dict[str, float] = {}
        for word, count in pairs:
            if not word:
                raise ValueError("dictionary words must be non-empty")
            if count < 0:
                raise ValueError(f"negative count for {word!r}")
            counts[word] = counts.get(word, 0.0) + float(count)
        if not counts:
            raise ValueError("dictionary must not be empty")
        self.alphabet = alphabet
        self.words = sorted(counts)
        self.counts = np.array([counts[w] for w in self.words])
        self.labels = [alphabet.encode(w) for w in self.words]
        total = self.counts.sum()
        v = len(self.words)
        if total > 0:
            self.priors = (self.counts / total + 1.0) / (v + 1.0)
        else:
            self.priors = np.full(v, 1.0 / v)
        self.log_priors = np.log(self.priors)

    @classmethod
    def load(cls, path, alphabet: Alphabet) -> "Dictionary":
        """UTF-8 text, one "count<TAB>word" entry per line, '#' comments."""
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                try:
                    count_text, word = line.split("\t", 1)
                    pairs.append((word, float(count_text)))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: expected 'count<TAB>word'") from None
        return cls(pairs, alphabet)

    def __len__(self) -> int:
        return len(self.words)

    def top_by_frequency(self, m: int) -> list[int]:
        """Indices of the m most frequent entries (ties: word order)."""
        order = sorted(range(len(self.words)), key=lambda i: (-self.counts[i], self.words[i]))
        return order[:m]


def word_cost(m, labels, log_prior: float, params: DecodeParams, blank: int | None = None) -> float:
    """Cost of one encoded word; +inf when the word is infeasible for
    the matrix length."""
    nll = ctc_neg_log_prob(m, labels, blank)
    if not np.isfinite(nll):
        return float("inf")
    return nll / float(len(labels)) ** params.alpha - params.beta * log_prior


def _as_members(m_or_committee) -> list:
    if isinstance(m_or_committee, (list, tuple)):
        if not m_or_committee:
            raise ValueError("committee must have at least one member")
        return list(m_or_committee)
    return [m_or_committee]


def _scan(members, dictionary: Dictionary, params: DecodeParams):
    """Cost of every (word, member) pair, reduced per word to the best
    member; yields ScoredWord entries in word order."""
    blank = dictionary.alphabet.garbage_index
    out = []
    for w, labels, logp in zip(dictionary.words, dictionary.labels, dictionary.log_priors):
        best_cost = float("inf")
        best_member = 0
        for i, m in enumerate(members):
            c = word_cost(m, labels, logp, params, blank)
            if c < best_cost:
                best_cost = c
                best_member = i
        out.append(ScoredWord(w, best_cost, best_member))
    return out


def best_word(m, dictionary: Dictionary, params: DecodeParams) -> ScoredWord | None:
    """Minimum-cost dictionary entry; None when every entry is
    infeasible."""
    scored = _scan(_as_members(m), dictionary, params)
    winner = min(scored, key=lambda s: (s.cost, s.word, s.member))
    return winner if np.isfinite(winner.cost) else None


def committee_best(matrices, dictionary: Dictionary, params: DecodeParams) -> ScoredWord | None:
    """Minimum cost over (word, member) pairs; reduces to best_word for
    a single member."""
    return best_word(_as_members(matrices), dictionary, params)


def top_k(m_or_committee, dictionary: Dictionary, params: DecodeParams, k: int) -> list[ScoredWord]:
    """The k lowest-cost entries in ascending cost order (per-word cost
    is the committee minimum); infeasible entries are dropped."""
    scored = _scan(_as_members(m_or_committee), dictionary, params)
    scored = [s for s in scored if np.isfinite(s.cost)]
    scored.sort(key=lambda s: (s.cost, s.word, s.member))
    return scored[:k]


@dataclass(frozen=True)
class NameResult:
    family: ScoredWord
    given: ScoredWord
    cost: float

    def __iter__(self):
        return iter((self.family, self.given))


def _name_pair_cost(members, full_labels, len_f, len_g, logp_f, logp_g,
                    params_family: DecodeParams, params_given: DecodeParams, blank: int):
    best = (float("inf"), float("inf"), float("inf"), 0)
    for i, m in enumerate(members):
        nll = ctc_neg_log_prob(m, full_labels, blank)
        if not np.isfinite(nll):
            continue
        share_f = len_f / (len_f + len_g)
        term_f = nll * share_f / len_f**params_family.alpha - params_family.beta * logp_f
        term_g = nll * (1.0 - share_f) / len_g**params_given.alpha - params_given.beta * logp_g
        if term_f + term_g < best[0]:
            best = (term_f + term_g, term_f, term_g, i)
    return best


def decode_name_field(
    m,
    family_dict: Dictionary,
    given_dict: Dictionary,
    params_family: DecodeParams,
    params_given: DecodeParams,
    cap: int = 200,
    k: int = 1,
):
    """Joint decode of a two-word name field over the cross product of
    both dictionaries (each capped to its `cap` most frequent entries).

    The candidate string is "family given"; its exact CTC cost is split
    between the parts in proportion to their symbol counts, and each
    part is then length-normalized and prior-weighted with its own
    (alpha, beta).  Returns the best NameResult, or the k best (ascending
    cost) when k > 1; None/empty when nothing is feasible."""
    members = _as_members(m)
    alphabet = family_dict.alphabet
    blank = alphabet.garbage_index
    results = []
    for fi in family_dict.top_by_frequency(cap):
        fam = family_dict.words[fi]
        len_f = len(family_dict.labels[fi])
        for gi in given_dict.top_by_frequency(cap):
            giv = given_dict.words[gi]
            full_labels = alphabet.encode(fam + " " + giv)
            total, term_f, term_g, member = _name_pair_cost(
                members, full_labels, len_f, len(given_dict.labels[gi]),
                family_dict.log_priors[fi], given_dict.log_priors[gi],
                params_family, params_given, blank,
            )
            if np.isfinite(total):
                results.append(NameResult(
                    ScoredWord(fam, term_f, member), ScoredWord(giv, term_g, member), total,
                ))
    results.sort(key=lambda r: (r.cost, r.family.word, r.given.word, r.family.member))
    if k == 1:
        return results[0] if results else None
    return results[:k]


def normalize_family_ditto(names: list[str]) -> tuple[list[str], list[int]]:
    """Replace "_" entries by the nearest preceding non-ditto family
    name in the same column.  Leading dittos stay "_" and their indices
    are returned as unresolved."""
    resolved = []
    unresolved = []
    last = None
    for i, name in enumerate(names):
        if name == "_":
            if last is None:
                resolved.append("_")
                unresolved.append(i)
            else:
                resolved.append(last)
        else:
            resolved.append(name)
            last = name
    return resolved, unresolved


@dataclass(frozen=True)
class ConsistencyRule:
    """If the row's RELATION equals `relation_value` and the word in
    `target_field` has a known lexicon gender different from
    `required_gender`, the target answer is penalized by `delta`; a
    later alternative of the required gender takes over when it beats
    the penalized answer and its own cost is within `gamma` of the
    original best."""

    rule_id: str
    relation_value: str
    required_gender: str
    target_field: str
    delta: float
    gamma: float

    def __post_init__(self):
        if self.required_gender not in ("m", "f"):
            raise ValueError("required_gender must be 'm' or 'f'")
        if not (self.delta > 0 and self.gamma > 0):
            raise ValueError("delta and gamma must be positive")


def load_rules(path) -> list[ConsistencyRule]:
    """One rule per line:
    id<TAB>relation-value<TAB>required-gender<TAB>target-field<TAB>delta<TAB>gamma."""
    rules = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 tab-separated fields")
            rules.append(ConsistencyRule(parts[0], parts[1], parts[2], parts[3],
                                         float(parts[4]), float(parts[5])))
    return rules


def load_gender_lexicon(path) -> dict[str, str]:
    """name<TAB>m|f lines, '#' comments; case-insensitive lookup keys."""
    lexicon = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                name, gender = line.split("\t")
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'name<TAB>m|f'") from None
            if gender not in ("m", "f"):
                raise ValueError(f"{path}:{lineno}: gender must be 'm' or 'f'")
            lexicon[name.lower()] = gender
    return lexicon


@dataclass
class ConsistencyEvent:
    rule_id: str
    target_field: str
    kept: str
    switched_to: str | None


def apply_consistency(
    row: dict[str, list[ScoredWord]],
    rules: list[ConsistencyRule],
    lexicon: dict[str, str],
) -> tuple[dict[str, ScoredWord], list[ConsistencyEvent]]:
    """Resolve cross-field contradictions in one table row.

    `row` maps field names to their top-k alternatives (ascending cost).
    Rules are applied in rule-id order; each firing rule either switches
    the target field to a compatible alternative or records that the
    penalized answer was kept.  Stored costs are never mutated, so
    re-running on the output is a no-op."""
    selection = {f: 0 for f, alts in row.items() if alts}
    events = []
    for rule in sorted(rules, key=lambda r: r.rule_id):
        if rule.target_field not in selection or "RELATION" not in selection:
            continue
        relation = row["RELATION"][selection["RELATION"]].word
        if relation != rule.relation_value:
            continue
        alts = row[rule.target_field]
        current = alts[selection[rule.target_field]]
        gender = lexicon.get(current.word.lower())
        if gender is None or gender == rule.required_gender:
            continue
        candidate_idx = None
        for idx in range(selection[rule.target_field] + 1, len(alts)):
            if lexicon.get(alts[idx].word.lower()) == rule.required_gender:
                candidate_idx = idx
                break
        switched = None
        if candidate_idx is not None:
            candidate = alts[candidate_idx]
            beats_penalized = candidate.cost < current.cost + rule.delta
            close_enough = candidate.cost - current.cost <= rule.gamma
            if beats_penalized and close_enough:
                selection[rule.target_field] = candidate_idx
                switched = candidate.word
        events.append(ConsistencyEvent(rule.rule_id, rule.target_field, current.word, switched))
    answers = {f: row[f][selection[f]] for f in selection}
    return answers, events


def grid_search_params(cases, dictionary: Dictionary, alphas, betas) -> tuple[DecodeParams, float]:
    """Exhaustive (alpha, beta) search maximizing exact-match word
    accuracy over (matrix, reference) cases; ties prefer the smaller
    alpha, then the smaller beta."""
    cases = list(cases)
    if not cases:
        raise ValueError("grid search needs at least one case")
    best_params = None
    best_acc = -1.0
    for alpha in sorted(alphas):
        for beta in sorted(betas):
            params = DecodeParams(alpha, beta)
            hits = 0
            for m, reference in cases:
                answer = best_word(m, dictionary, params)
                if answer is not None and answer.word == reference:
                    hits += 1
            acc = hits / len(cases)
            if acc > best_acc:
                best_acc = acc
                best_params = params
    return best_params, best_acc
