"""Triplet construction across the tablet (anchor) and paper (positive /
negative) datasets: the substitution-only edit-distance pair dictionary, the
epoch-scheduled negative lower bound, the dynamic margin, and the pairwise
losses built on the DML distance family."""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import diffengine as de
from .dml import dml_distance
from .metrics import SUBSTITUTION_ONLY, edit_distance

MAX_ED = 10
SCHEDULE_STEP = 20


@dataclass
class TripletDictionary:
    """pairs[d] lists (tablet_index, paper_index) with substitution-only ED d."""
    pairs: dict = field(default_factory=dict)

    def counts(self):
        return {d: len(self.pairs.get(d, [])) for d in range(MAX_ED + 1)}

    def export_csv(self, path, tablet, paper):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["ed", "tablet_id", "paper_id"])
            for d in sorted(self.pairs):
                for ti, pj in self.pairs[d]:
                    w.writerow([d, tablet.samples[ti].id, paper.samples[pj].id])


@dataclass
class Triplet:
    anchor: int    # tablet index
    positive: int  # paper index, ED 0
    negative: int  # paper index, ED >= 1
    negative_ed: int
    fallback: bool = False


def build_pair_dictionary(tablet, paper):
    """Index all equal-length cross-domain label pairs by substitution-only ED."""
    dist_cache = {}
    pairs = {}
    for ti, ts in enumerate(tablet.samples):
        for pj, ps in enumerate(paper.samples):
            key = (ts.label, ps.label)
            if key not in dist_cache:
                if len(ts.label) != len(ps.label):
                    dist_cache[key] = None
                else:
                    dist_cache[key] = edit_distance(ts.label, ps.label, SUBSTITUTION_ONLY)
            d = dist_cache[key]
            if d is not None and d <= MAX_ED:
                pairs.setdefault(d, []).append((ti, pj))
    if not pairs.get(0):
        raise ValueError("no positives available: no cross-domain pair with ED 0")
    return TripletDictionary(pairs=pairs)


def ed_lower_bound(e, max_e):
    """Scheduled lower bound on the negative ED for epoch e of max_e."""
    if not 0 <= e < max_e:
        raise ValueError("epoch %d outside [0, %d)" % (e, max_e))
    return 1 + (max_e - e - 1) // SCHEDULE_STEP


def _per_anchor(dictionary):
    by_anchor = {}
    for d, plist in dictionary.pairs.items():
        for ti, pj in plist:
            by_anchor.setdefault(ti, {}).setdefault(d, []).append(pj)
    return by_anchor


def select_triplets(anchors, dictionary, e, max_e, seed):
    """One random positive (ED 0) and one random negative per anchor.

    Negatives come from the smallest populated ED >= the scheduled bound; if
    none exists for the anchor, fall back downward to the largest populated
    ED below the bound (flagged).  Anchors without positives are skipped.
    """
    bound = ed_lower_bound(e, max_e)
    by_anchor = _per_anchor(dictionary)
    if not any(d >= 1 for amap in by_anchor.values() for d in amap):
        raise ValueError("pair dictionary has no negatives")
    rng = np.random.default_rng(seed)
    triplets = []
    skipped = 0
    for a in anchors:
        amap = by_anchor.get(a, {})
        positives = amap.get(0)
        neg_eds = sorted(d for d in amap if d >= 1)
        if not positives or not neg_eds:
            skipped += 1
            continue
        above = [d for d in neg_eds if d >= bound]
        if above:
            ed = above[0]
            fallback = False
        else:
            ed = neg_eds[-1]
            fallback = True
        pos = positives[int(rng.integers(len(positives)))]
        negs = amap[ed]
        neg = negs[int(rng.integers(len(negs)))]
        triplets.append(Triplet(anchor=a, positive=pos, negative=neg,
                                negative_ed=ed, fallback=fallback))
    return triplets, skipped


@dataclass
class MarginPolicy:
    beta: float
    lo: float = 1.0
    hi: float = 11.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")


def dynamic_margin(triplets, policy):
    """alpha = beta * clamp(mean anchor-negative ED, 1, 11)."""
    if not triplets:
        raise ValueError("need at least one triplet")
    mean_ed = float(np.mean([t.negative_ed for t in triplets]))
    return policy.beta * min(max(mean_ed, policy.lo), policy.hi)


def triplet_loss(anchor_bags, positive_bags, negative_bags, spec, alpha):
    """Sum of hinges max(d(a,p) - d(a,n) + alpha, 0) over the batch."""
    if not anchor_bags:
        raise ValueError("need at least one triplet")
    if not (len(anchor_bags) == len(positive_bags) == len(negative_bags)):
        raise ValueError("bag list length mismatch")
    total = None
    for a, p, n in zip(anchor_bags, positive_bags, negative_bags):
        d_ap = dml_distance(spec, a, p)
        d_an = dml_distance(spec, a, n)
        term = de.relu(de.add(de.sub(d_ap, d_an), alpha))
        total = term if total is None else de.add(total, term)
    return total


def contrastive_loss(pairs, spec, alpha):
    """Classic hinge contrastive loss over (anchor_bag, other_bag, same) pairs."""
    if not pairs:
        raise ValueError("need at least one pair")
    total = None
    for a, other, same in pairs:
        d = dml_distance(spec, a, other)
        term = d if same else de.relu(de.sub(alpha, d))
        total = term if total is None else de.add(total, term)
    return total
