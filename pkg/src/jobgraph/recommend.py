"""User classification and recommendation strategies over the rec digraph.

Users fall into three types by their windowed behavior: active users (at
least one apply or click) get graph propagation from their source jobs,
first over direct edges and then over two-hop paths with score
multiplication; users known only through a resume category get personalized
PageRank seeded from a preference set; anonymous users get global PageRank
over the active jobs. Candidates near the user's location are boosted
during a final re-rank.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import DedupedSignal, JobRecord, SignalKind, UserRecord
from .scoring import RecDigraph, embed_sim

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088


class UserType(Enum):
    ACTIVE = "active"
    PASSIVE_OR_NEW_WITH_PROFILE = "passive_or_new_with_profile"
    ANONYMOUS = "anonymous"


class Provenance(Enum):
    """Which strategy produced a recommendation entry."""

    LEVEL1 = "level1"
    LEVEL2 = "level2"
    PERSONALIZED_PAGERANK = "personalized_pagerank"
    GLOBAL_PAGERANK = "global_pagerank"


@dataclass(frozen=True)
class Interaction:
    job_id: str
    kind: SignalKind
    timestamp: datetime


@dataclass(frozen=True)
class UserProfile:
    """A user's windowed interactions plus resume category and location."""

    user_id: str
    interactions: tuple[Interaction, ...] = ()
    resume_category: str | None = None
    location: tuple[float, float] | None = None

    def engaged_jobs(self) -> set[str]:
        """Jobs the user applied to or clicked (their interaction history)."""
        return {
            i.job_id
            for i in self.interactions
            if i.kind in (SignalKind.APPLY, SignalKind.CLICK)
        }


@dataclass(frozen=True)
class Recommendation:
    job_id: str
    score: float
    provenance: Provenance


@dataclass
class PageRankResult:
    """Scores per node plus convergence diagnostics."""

    scores: dict[str, float]
    converged: bool
    iterations: int


def build_profiles(
    signals: Sequence[DedupedSignal],
    users: Mapping[str, UserRecord] | None = None,
    taxonomy: Iterable[str] | None = None,
) -> dict[str, UserProfile]:
    """Assemble profiles from windowed deduped signals and the users corpus.

    Users present only in the events still get a profile (no resume, no
    location). A resume category outside the jobs taxonomy is treated as
    absent, with a warning.
    """
    users = users or {}
    tax = set(taxonomy) if taxonomy is not None else None
    interactions: dict[str, list[Interaction]] = {}
    for s in signals:
        interactions.setdefault(s.user_id, []).append(
            Interaction(s.job_id, s.kind, s.timestamp)
        )
    profiles: dict[str, UserProfile] = {}
    for user_id in sorted(set(interactions) | set(users)):
        record = users.get(user_id)
        category = record.resume_category if record else None
        if category is not None and tax is not None and category not in tax:
            logger.warning(
                "user %s resume category %r not in jobs taxonomy; ignoring", user_id, category
            )
            category = None
        profiles[user_id] = UserProfile(
            user_id,
            tuple(interactions.get(user_id, ())),
            category,
            record.location if record else None,
        )
    return profiles


def classify_user(profile: UserProfile) -> UserType:
    """Type 1 / 2 / 3 classification; ignored-email signals do not make a
    user active."""
    if any(i.kind in (SignalKind.APPLY, SignalKind.CLICK) for i in profile.interactions):
        return UserType.ACTIVE
    if profile.resume_category is not None:
        return UserType.PASSIVE_OR_NEW_WITH_PROFILE
    return UserType.ANONYMOUS


def activity_score(age_days: float, decay: float = 0.05) -> float:
    """Recency weight ``exp(-decay * age_days)``; strictly decreasing in age."""
    if age_days < 0:
        raise ValueError(f"age_days must be non-negative, got {age_days}")
    return math.exp(-decay * age_days)


def sources_with_activity(
    profile: UserProfile, reference_date: datetime, decay: float = 0.05
) -> list[tuple[str, float]]:
    """The user's applied/clicked jobs, each weighted by the recency of the
    most recent interaction with it. Sorted by job_id."""
    best_age: dict[str, float] = {}
    for i in profile.interactions:
        if i.kind not in (SignalKind.APPLY, SignalKind.CLICK):
            continue
        age = max((reference_date - i.timestamp).total_seconds() / 86400.0, 0.0)
        if i.job_id not in best_age or age < best_age[i.job_id]:
            best_age[i.job_id] = age
    return [(job_id, activity_score(age, decay)) for job_id, age in sorted(best_age.items())]


def _top_k(candidates: Mapping[str, float], k: int) -> list[tuple[str, float]]:
    ranked = sorted(candidates.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


def level1(
    digraph: RecDigraph,
    sources: Sequence[tuple[str, float]],
    k: int,
    exclude: Iterable[str] = (),
) -> list[tuple[str, float]]:
    """Direct propagation: each out-neighbor of a source job is scored
    ``activity * corr``, merged across sources by max. Source jobs are never
    candidates."""
    banned = set(exclude) | {job_id for job_id, _ in sources}
    candidates: dict[str, float] = {}
    for job_id, activity in sources:
        for dst, es in digraph.out_edges(job_id):
            if dst in banned:
                continue
            score = activity * es.corr
            if dst not in candidates or score > candidates[dst]:
                candidates[dst] = score
    return _top_k(candidates, k)


def level2(
    digraph: RecDigraph,
    level1_results: Sequence[tuple[str, float]],
    k: int,
    per_node_fanout: int | None = None,
    exclude: Iterable[str] = (),
) -> list[tuple[str, float]]:
    """Second propagation hop from the level-1 candidates.

    Each successor of a level-1 job inherits the path score multiplied along
    the path (level-1 score times the onward edge's corr), max-merged across
    paths. Jobs already recommended at level 1 and jobs in ``exclude`` are
    skipped.
    """
    level1_jobs = {job_id for job_id, _ in level1_results}
    banned = set(exclude) | level1_jobs
    candidates: dict[str, float] = {}
    for mid, path_score in level1_results:
        successors = sorted(digraph.out_edges(mid), key=lambda e: (-e[1].corr, e[0]))
        if per_node_fanout is not None:
            successors = successors[:per_node_fanout]
        for dst, es in successors:
            if dst in banned:
                continue
            score = path_score * es.corr
            if dst not in candidates or score > candidates[dst]:
                candidates[dst] = score
    return _top_k(candidates, k)


def _pagerank_iterate(
    nodes: list[str],
    weighted_edges: list[tuple[int, int, float]],
    restart: np.ndarray,
    damping: float,
    epsilon: float,
    max_iters: int,
) -> PageRankResult:
    """Power iteration with restart; dangling mass teleports to the restart
    distribution (so a full uniform restart reproduces plain PageRank)."""
    n = len(nodes)
    if n == 0:
        return PageRankResult({}, True, 0)
    out_sum = np.zeros(n)
    for src, _, w in weighted_edges:
        out_sum[src] += w
    src_idx = np.array([e[0] for e in weighted_edges], dtype=np.intp)
    dst_idx = np.array([e[1] for e in weighted_edges], dtype=np.intp)
    prob = np.array([w / out_sum[s] for s, _, w in weighted_edges], dtype=np.float64)
    dangling = out_sum == 0.0

    x = restart.copy()
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        flow = np.zeros(n)
        if len(weighted_edges):
            np.add.at(flow, dst_idx, x[src_idx] * prob)
        dangling_mass = float(x[dangling].sum())
        x_next = damping * (flow + dangling_mass * restart) + (1.0 - damping) * restart
        delta = float(np.abs(x_next - x).sum())
        x = x_next
        if delta < epsilon:
            converged = True
            break
    if not converged:
        logger.warning("pagerank did not converge within %d iterations", max_iters)
    return PageRankResult(
        {node: float(score) for node, score in zip(nodes, x)}, converged, iterations
    )


def _transition_edges(
    digraph: RecDigraph, index: Mapping[str, int]
) -> list[tuple[int, int, float]]:
    """Corr-weighted edges within the indexed node set; negative aggregate
    scores are clamped to zero since transitions need non-negative weights."""
    edges: list[tuple[int, int, float]] = []
    for src, si in index.items():
        for dst, es in digraph.out_edges(src):
            di = index.get(dst)
            if di is None:
                continue
            w = max(es.corr, 0.0)
            if w > 0.0:
                edges.append((si, di, w))
    return edges


def global_pagerank(
    digraph: RecDigraph,
    damping: float = 0.85,
    epsilon: float = 1e-10,
    max_iters: int = 100,
) -> PageRankResult:
    """Popularity scores over all active jobs; scores sum to 1."""
    if not 0.0 < damping < 1.0:
        raise ValueError(f"damping must lie in (0, 1), got {damping}")
    nodes = sorted(digraph.active_jobs)
    if not nodes:
        logger.warning("global pagerank on empty digraph")
        return PageRankResult({}, True, 0)
    index = {node: i for i, node in enumerate(nodes)}
    restart = np.full(len(nodes), 1.0 / len(nodes))
    return _pagerank_iterate(
        nodes, _transition_edges(digraph, index), restart, damping, epsilon, max_iters
    )


def personalized_pagerank(
    digraph: RecDigraph,
    preference_jobs: Iterable[str],
    damping: float = 0.85,
    epsilon: float = 1e-10,
    max_iters: int = 100,
) -> PageRankResult:
    """PageRank whose restart mass is uniform over the preference jobs.

    Runs on the subgraph reachable from the preference set via outgoing
    edges (nodes outside it can never hold mass, since dangling mass also
    returns to the preference set).
    """
    if not 0.0 < damping < 1.0:
        raise ValueError(f"damping must lie in (0, 1), got {damping}")
    prefs = sorted(set(preference_jobs) & digraph.active_jobs)
    if not prefs:
        logger.warning("preference set shares no jobs with the digraph")
        return PageRankResult({}, True, 0)

    reachable: set[str] = set(prefs)
    frontier = list(prefs)
    while frontier:
        nxt: list[str] = []
        for src in frontier:
            for dst, es in digraph.out_edges(src):
                if es.corr > 0.0 and dst in digraph.active_jobs and dst not in reachable:
                    reachable.add(dst)
                    nxt.append(dst)
        frontier = nxt

    nodes = sorted(reachable)
    index = {node: i for i, node in enumerate(nodes)}
    restart = np.zeros(len(nodes))
    for p in prefs:
        restart[index[p]] = 1.0 / len(prefs)
    return _pagerank_iterate(
        nodes, _transition_edges(digraph, index), restart, damping, epsilon, max_iters
    )


def preference_vector(
    profile: UserProfile,
    jobs: Mapping[str, JobRecord],
    embeddings: Mapping[str, np.ndarray],
    m_similar: int = 5,
) -> list[str]:
    """Seed jobs for personalized PageRank.

    The union of (a) the ``m_similar`` active jobs most content-similar to
    each expired job in the user's history and (b) every active job whose
    category matches the user's resume category. Brand-new users (empty
    history) get (b) only; an empty result tells the caller to degrade to
    global recommendations.
    """
    active_ids = sorted(j for j, rec in jobs.items() if rec.is_active)
    prefs: set[str] = set()

    expired_history = sorted(
        {
            i.job_id
            for i in profile.interactions
            if i.job_id in jobs and not jobs[i.job_id].is_active and i.job_id in embeddings
        }
    )
    if expired_history:
        embeddable = [j for j in active_ids if j in embeddings]
        for old_job in expired_history:
            sims = [(-embed_sim(embeddings[old_job], embeddings[j]), j) for j in embeddable]
            sims.sort()
            prefs.update(j for _, j in sims[:m_similar])

    if profile.resume_category is not None:
        prefs.update(j for j in active_ids if jobs[j].category == profile.resume_category)

    return sorted(prefs)


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance between two (lat, lon) points in kilometers."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


def location_rerank(
    candidates: Sequence[tuple[str, float]],
    user_location: tuple[float, float] | None,
    jobs: Mapping[str, JobRecord],
    radius_km: float = 80.0,
    boost: float = 1.25,
) -> list[tuple[str, float]]:
    """Boost candidates within ``radius_km`` of the user, then re-sort.

    Never adds or removes candidates; a no-op without a user location.
    """
    if boost < 1.0:
        raise ValueError(f"boost must be >= 1, got {boost}")
    if user_location is None or boost == 1.0:
        return list(candidates)

    def boosted(job_id: str, score: float) -> float:
        record = jobs.get(job_id)
        if record is None or record.location is None:
            return score
        if haversine_km(user_location, record.location) <= radius_km:
            return score * boost
        return score

    rescored = [(job_id, boosted(job_id, score)) for job_id, score in candidates]
    rescored.sort(key=lambda kv: (-kv[1], kv[0]))
    return rescored


@dataclass(frozen=True)
class RecommenderParams:
    """Knobs of the recommendation pipeline (see the engine config)."""

    k: int = 15
    min_recs: int | None = None
    activity_decay: float = 0.05
    per_node_fanout: int | None = None
    damping: float = 0.85
    pagerank_epsilon: float = 1e-10
    pagerank_max_iters: int = 100
    m_similar: int = 5
    location_radius_km: float = 80.0
    location_boost: float = 1.25


def _pagerank_fill(
    result: PageRankResult, banned: set[str], slots: int
) -> list[tuple[str, float]]:
    candidates = {j: s for j, s in result.scores.items() if j not in banned}
    return _top_k(candidates, slots)


def recommend(
    profile: UserProfile,
    digraph: RecDigraph,
    jobs: Mapping[str, JobRecord],
    embeddings: Mapping[str, np.ndarray],
    reference_date: datetime,
    params: RecommenderParams = RecommenderParams(),
) -> list[Recommendation]:
    """Produce the ranked top-k list for one user (any type).

    Output invariants: only active jobs, never jobs from the user's
    apply/click history, no duplicates, scores non-increasing within each
    provenance tier, tiers ordered by strategy precedence.
    """
    k = params.k
    min_recs = params.min_recs if params.min_recs is not None else k
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not digraph.active_jobs:
        logger.warning("empty digraph: no recommendations possible")
        return []

    history = profile.engaged_jobs()
    tiers: list[tuple[Provenance, list[tuple[str, float]]]] = []
    user_type = classify_user(profile)

    def fill_with_pagerank(taken: set[str], slots: int) -> None:
        """Personalized fill via the preference set, else global."""
        prefs = preference_vector(profile, jobs, embeddings, params.m_similar)
        banned = taken | history
        if prefs:
            ppr = personalized_pagerank(
                digraph, prefs, params.damping, params.pagerank_epsilon, params.pagerank_max_iters
            )
            picked = _pagerank_fill(ppr, banned, slots)
            if picked:
                tiers.append((Provenance.PERSONALIZED_PAGERANK, picked))
                return
        gpr = global_pagerank(
            digraph, params.damping, params.pagerank_epsilon, params.pagerank_max_iters
        )
        picked = _pagerank_fill(gpr, banned, slots)
        if picked:
            tiers.append((Provenance.GLOBAL_PAGERANK, picked))

    if user_type is UserType.ACTIVE:
        sources = sources_with_activity(profile, reference_date, params.activity_decay)
        l1 = level1(digraph, sources, k, exclude=history)
        if l1:
            tiers.append((Provenance.LEVEL1, l1))
        taken = {job_id for job_id, _ in l1}
        if len(taken) < min_recs:
            l2 = level2(digraph, l1, k, params.per_node_fanout, exclude=history)
            l2 = l2[: k - len(taken)]
            if l2:
                tiers.append((Provenance.LEVEL2, l2))
            taken |= {job_id for job_id, _ in l2}
        if len(taken) < min_recs:
            fill_with_pagerank(taken, k - len(taken))
    elif user_type is UserType.PASSIVE_OR_NEW_WITH_PROFILE:
        fill_with_pagerank(set(), k)
    else:
        gpr = global_pagerank(
            digraph, params.damping, params.pagerank_epsilon, params.pagerank_max_iters
        )
        picked = _pagerank_fill(gpr, history, k)
        if picked:
            tiers.append((Provenance.GLOBAL_PAGERANK, picked))

    out: list[Recommendation] = []
    seen: set[str] = set()
    for provenance, entries in tiers:
        reranked = location_rerank(
            entries, profile.location, jobs, params.location_radius_km, params.location_boost
        )
        for job_id, score in reranked:
            if job_id in seen or len(out) >= k:
                continue
            seen.add(job_id)
            out.append(Recommendation(job_id, score, provenance))
    return out
