"""Synthetic entailment-style data with a built-in shortcut.

An example is a premise (sorted distinct tokens from the main content range)
and a hypothesis. Three kinds:

  POS          hypothesis is an order-preserving subsequence of the premise
               (hence ascending); gold label entail.
  N1_random    hypothesis drawn from a reserved content range, sharing fewer
               than hypothesis_len/2 tokens with the premise; gold non-entail.
  N2_permuted  hypothesis is a permuted subsequence (first token value greater
               than last, so never order-preserving); gold non-entail.

The in-distribution splits mix POS 50/50 against negatives that are mostly N1,
so a bag-of-words overlap test solves almost everything; only the rare N2
negatives require order sensitivity. The diagnostic split is pure N2 - a model
leaning on overlap scores near zero there.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .model import Batch, ModelConfig, PAD_ID, SEP_ID

KINDS = ("POS", "N1_random", "N2_permuted")
SPLIT_IDS = ("train", "id_val", "diagnostic", "pretrain")

# stable per-split seed offsets so gen_split(spec, split, seed) never collides
_SPLIT_KEYS = {"train": 0, "id_val": 1, "diagnostic": 2, "pretrain": 3, "fixture": 4}


@dataclass(frozen=True)
class TaskSpec:
    vocab_size: int = 64
    premise_len: int = 8
    hypothesis_len: int = 4
    n2_fraction_of_negatives: float = 0.10
    split_sizes: dict = field(
        default_factory=lambda: {"train": 20000, "id_val": 4000, "diagnostic": 2000, "pretrain": 20000}
    )
    seed: int = 0

    def __post_init__(self):
        if self.hypothesis_len > self.premise_len:
            raise ValueError("hypothesis_len must not exceed premise_len")
        if not (0.0 <= self.n2_fraction_of_negatives <= 1.0):
            raise ValueError("n2_fraction_of_negatives must lie in [0, 1]")
        lo, hi = self.premise_range
        blo, bhi = self.negative_range
        if hi - lo < self.premise_len:
            raise ValueError("vocab too small for distinct premise tokens")
        if bhi - blo < self.hypothesis_len:
            raise ValueError("vocab too small to satisfy the N1 overlap bound")

    @property
    def content_range(self) -> tuple[int, int]:
        return (2, self.vocab_size)  # ids 0/1 reserved for separator/padding

    @property
    def premise_range(self) -> tuple[int, int]:
        lo, hi = self.content_range
        n_main = max(self.premise_len, round((hi - lo) * 2 / 3))
        return (lo, min(lo + n_main, hi))

    @property
    def negative_range(self) -> tuple[int, int]:
        # reserved sub-vocabulary for N1 hypotheses
        return (self.premise_range[1], self.vocab_size)

    def encoded_len(self) -> int:
        return self.premise_len + 1 + self.hypothesis_len + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(**d)


@dataclass(frozen=True)
class Example:
    premise: tuple[int, ...]
    hypothesis: tuple[int, ...]
    gold_label: int
    kind: str

    def key(self) -> tuple:
        return (self.premise, self.hypothesis)


@dataclass(frozen=True)
class DatasetSplit:
    examples: tuple[Example, ...]
    split_id: str
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.examples)

    def kind_counts(self) -> dict[str, int]:
        out = {k: 0 for k in KINDS}
        for ex in self.examples:
            out[ex.kind] += 1
        return out


def overlap_oracle(example: Example) -> int:
    """1 iff the hypothesis multiset is contained in the premise multiset."""
    prem = list(example.premise)
    for t in example.hypothesis:
        if t in prem:
            prem.remove(t)
        else:
            return 0
    return 1


def positional_oracle(example: Example) -> int:
    """1 iff the hypothesis is an order-preserving subsequence of the premise."""
    it = iter(example.premise)
    return int(all(t in it for t in example.hypothesis))


def _sample_premise(rng: np.random.Generator, spec: TaskSpec) -> np.ndarray:
    lo, hi = spec.premise_range
    return np.sort(rng.choice(np.arange(lo, hi), size=spec.premise_len, replace=False))


def _sample_subsequence(rng: np.random.Generator, spec: TaskSpec, premise: np.ndarray) -> np.ndarray:
    idx = np.sort(rng.choice(spec.premise_len, size=spec.hypothesis_len, replace=False))
    return premise[idx]


def _ints(arr) -> tuple[int, ...]:
    return tuple(int(t) for t in arr)


def _make_pos(rng, spec) -> Example:
    premise = _sample_premise(rng, spec)
    hyp = _sample_subsequence(rng, spec, premise)
    return Example(_ints(premise), _ints(hyp), 1, "POS")


def _make_n2(rng, spec) -> Example:
    premise = _sample_premise(rng, spec)
    sub = _sample_subsequence(rng, spec, premise)
    # permutation with first > last: guarantees an inversion and (tokens being
    # distinct) rules out any order-preserving reading of the hypothesis
    while True:
        perm = rng.permutation(spec.hypothesis_len)
        hyp = sub[perm]
        if hyp[0] > hyp[-1]:
            return Example(_ints(premise), _ints(hyp), 0, "N2_permuted")


def _make_n1(rng, spec) -> Example:
    premise = _sample_premise(rng, spec)
    lo, hi = spec.negative_range
    hyp = rng.choice(np.arange(lo, hi), size=spec.hypothesis_len, replace=False)
    return Example(_ints(premise), _ints(hyp), 0, "N1_random")


_MAKERS = {"POS": _make_pos, "N1_random": _make_n1, "N2_permuted": _make_n2}


def _generate(rng: np.random.Generator, spec: TaskSpec, kinds: list[str]) -> list[Example]:
    seen = set()
    out = []
    for kind in kinds:
        for _ in range(1000):
            ex = _MAKERS[kind](rng, spec)
            if ex.key() not in seen:
                seen.add(ex.key())
                out.append(ex)
                break
        else:
            raise RuntimeError(f"could not generate a fresh {kind} example")
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def _mixture(n: int, n2_fraction: float) -> list[str]:
    n_pos = n // 2
    n_neg = n - n_pos
    n_n2 = round(n2_fraction * n_neg)
    return ["POS"] * n_pos + ["N1_random"] * (n_neg - n_n2) + ["N2_permuted"] * n_n2


def gen_split(spec: TaskSpec, split_id: str, seed: int) -> DatasetSplit:
    """Deterministic split generation; diagnostic is all-N2, gold non-entail."""
    if split_id not in SPLIT_IDS:
        raise ValueError(f"unknown split_id {split_id!r}")
    n = spec.split_sizes[split_id]
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SPLIT_KEYS[split_id]]))
    if split_id == "diagnostic":
        kinds = ["N2_permuted"] * n
    else:
        kinds = _mixture(n, spec.n2_fraction_of_negatives)
    examples = _generate(rng, spec, kinds)
    meta = {"split_id": split_id, "seed": seed, "spec": spec.to_dict()}
    return DatasetSplit(tuple(examples), split_id, meta)


def gen_forced_fixture(spec: TaskSpec, strategy: str, seed: int) -> DatasetSplit:
    """Training split engineered to force one strategy.

    heuristic: negatives are all N1 and every premise/hypothesis is
    independently token-shuffled, so order carries no signal and only
    bag-of-words is learnable. generalizing: negatives are 40% N2, enough
    pressure that the positional rule is required for high accuracy.
    """
    if strategy not in ("heuristic", "generalizing"):
        raise ValueError(f"unknown strategy {strategy!r}")
    n = spec.split_sizes["train"]
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SPLIT_KEYS["fixture"], 0 if strategy == "heuristic" else 1]))
    if strategy == "heuristic":
        kinds = _mixture(n, 0.0)
        examples = _generate(rng, spec, kinds)
        shuffled = []
        for ex in examples:
            prem = _ints(np.asarray(ex.premise)[rng.permutation(len(ex.premise))])
            hyp = _ints(np.asarray(ex.hypothesis)[rng.permutation(len(ex.hypothesis))])
            shuffled.append(Example(prem, hyp, ex.gold_label, ex.kind))
        examples = shuffled
    else:
        kinds = _mixture(n, 0.40)
        examples = _generate(rng, spec, kinds)
    meta = {"split_id": "train", "seed": seed, "strategy": strategy, "spec": spec.to_dict()}
    return DatasetSplit(tuple(examples), "train", meta)


def encode_batch(examples, spec: TaskSpec, config: ModelConfig) -> Batch:
    """Token layout: premise, separator, hypothesis, trailing padding."""
    if config.max_len < spec.encoded_len():
        raise ValueError("model max_len too small for the task layout")
    n = len(examples)
    token_ids = np.full((n, config.max_len), PAD_ID, dtype=np.int64)
    pad_mask = np.zeros((n, config.max_len), dtype=bool)
    labels = np.zeros(n, dtype=np.int64)
    p, h = spec.premise_len, spec.hypothesis_len
    for i, ex in enumerate(examples):
        token_ids[i, :p] = ex.premise
        token_ids[i, p] = SEP_ID
        token_ids[i, p + 1 : p + 1 + h] = ex.hypothesis
        pad_mask[i, : p + 1 + h] = True
        labels[i] = ex.gold_label
    return Batch(token_ids, pad_mask, labels)


def split_to_jsonl(split: DatasetSplit) -> str:
    lines = []
    for ex in split.examples:
        lines.append(
            json.dumps(
                {
                    "premise": list(ex.premise),
                    "hypothesis": list(ex.hypothesis),
                    "label": ex.gold_label,
                    "kind": ex.kind,
                }
            )
        )
    return "\n".join(lines) + "\n"


def save_split(split: DatasetSplit, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(split_to_jsonl(split))


def load_split(path, split_id: str = "train") -> DatasetSplit:
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            examples.append(
                Example(tuple(rec["premise"]), tuple(rec["hypothesis"]), int(rec["label"]), rec["kind"])
            )
    return DatasetSplit(tuple(examples), split_id, {"path": str(path)})
