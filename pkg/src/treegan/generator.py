"""The masked tree generator.

An LSTM reads ``x_t = (a_{t-1}, p_t)``: the embedding of the previous
action and of the action that created the current node.  A parent stack
and a children stack (pushdown style, with sentinel ``GAMMA`` and
pseudo-root ``R``) decide at every step which node is expanded next.
Terminal nodes are emitted without sampling; nonterminal nodes sample a
production from the softmax restricted to that nonterminal's mask row.

Sampling runs under an action budget: a production is only allowed if the
tree can still be closed within the budget after choosing it.  With an
unbounded budget this reduces to the plain grammar mask.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .grammar import Grammar, MaskMatrix, build_mask
from .nn import LstmCellState, affine, init_affine, init_lstm, init_uniform, lstm_step
from .parse_tree import ActionSequence, ActionStep, ParseTree, Replay, ReplayError, TreeBuilder, replay_actions

PREFIX = "gen"
GAMMA = None  # bottom-of-stack sentinel; never popped


@dataclass
class GeneratorModel:
    store: ad.ParamStore
    n_productions: int
    n_terminals: int
    embed_dim: int
    hidden: int

    @classmethod
    def create(cls, g: Grammar, embed_dim: int, hidden: int, rng: np.random.Generator,
               store: ad.ParamStore | None = None) -> "GeneratorModel":
        store = ad.ParamStore() if store is None else store
        store.add(f"{PREFIX}.emb_rule", init_uniform(rng, (g.n_productions, embed_dim)))
        store.add(f"{PREFIX}.emb_term", init_uniform(rng, (g.n_terminals, embed_dim)))
        store.add(f"{PREFIX}.emb_root", init_uniform(rng, (1, embed_dim)))
        init_lstm(store, f"{PREFIX}.lstm", 2 * embed_dim, hidden, rng)
        init_affine(store, f"{PREFIX}.out", g.n_actions, hidden, rng)
        return cls(store, g.n_productions, g.n_terminals, embed_dim, hidden)

    @property
    def n_actions(self) -> int:
        return self.n_productions + self.n_terminals

    @property
    def root_action(self) -> int:
        """Row of the pseudo-action that stands in for ``R`` and for step 0."""
        return self.n_actions

    def param_names(self) -> list[str]:
        return self.store.names(PREFIX + ".")

    def check_grammar(self, g: Grammar) -> None:
        if (g.n_productions, g.n_terminals) != (self.n_productions, self.n_terminals):
            raise ValueError(
                f"generator built for |P|={self.n_productions}, |T|={self.n_terminals}; "
                f"grammar has |P|={g.n_productions}, |T|={g.n_terminals}")

    def hyper(self) -> dict:
        return {"embed_dim": self.embed_dim, "hidden": self.hidden,
                "n_productions": self.n_productions, "n_terminals": self.n_terminals}


def _embedding_table(P):
    return ad.concat([P[f"{PREFIX}.emb_rule"], P[f"{PREFIX}.emb_term"], P[f"{PREFIX}.emb_root"]], axis=0)


# ---------------------------------------------------------------------------
# step-by-step sampling


@dataclass
class ParentRecord:
    symbol: int | None  # None for the pseudo-root
    step: int
    action: int


@dataclass
class GeneratorState:
    parent_stack: list
    children_stack: list
    lstm: LstmCellState
    last_action: int
    step: int
    emitted: list = field(default_factory=list)
    builder: TreeBuilder = field(default_factory=TreeBuilder)
    pending_cost: int = 0

    @property
    def closed(self) -> bool:
        return len(self.parent_stack) == 1 and len(self.children_stack) == 1

    def sequence(self) -> ActionSequence:
        return ActionSequence(tuple(self.emitted))


def init_state(model: GeneratorModel, g: Grammar) -> GeneratorState:
    model.check_grammar(g)
    return GeneratorState(
        parent_stack=[GAMMA, ParentRecord(None, 0, model.root_action)],
        children_stack=[GAMMA, (g.start.id, -1)],
        lstm=LstmCellState.zeros(model.hidden),
        last_action=model.root_action,
        step=1,
        pending_cost=g.completion_cost[g.start.id],
    )


def _sym_cost(g: Grammar, sid: int) -> int:
    s = g.symbols[sid]
    if s.is_epsilon:
        return 0
    return 1 if s.is_terminal else g.completion_cost[sid]


def feasible_rules(g: Grammar, row: np.ndarray, used: int, pending_rest: int, budget: int | None) -> np.ndarray:
    """Mask row further restricted to rules that can still close within ``budget``."""
    if budget is None:
        return row
    allowed = row.copy()
    nP = g.n_productions
    allowed[:nP] &= (used + g.rule_cost + pending_rest) <= budget
    return allowed


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw; zero-probability entries are never returned."""
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    k = int(np.searchsorted(cdf, u, side="right"))
    if k >= len(probs) or probs[k] == 0.0:
        k = int(np.flatnonzero(probs)[-1])
    return k


def step(state: GeneratorState, model: GeneratorModel, g: Grammar, mask: MaskMatrix,
         rng: np.random.Generator, budget: int | None = None,
         P=None, table=None, trace: Callable | None = None) -> tuple[int, GeneratorState]:
    """Advance one action; mutates and returns ``state``."""
    if state.closed:
        raise RuntimeError("generation already closed")
    par = state.parent_stack.pop()
    child = state.children_stack.pop()
    if par is GAMMA or child is GAMMA:
        raise RuntimeError("stack sentinel popped: parent/children stacks out of balance")
    sid, pnode = child
    sym = g.symbols[sid]
    t = state.step
    state.pending_cost -= _sym_cost(g, sid)
    if sym.is_terminal:
        action = g.n_productions + g.term_index[sid]
        state.builder.add(sid, pnode)
    else:
        P = model.store.bind(None) if P is None else P
        table = _embedding_table(P) if table is None else table
        x = np.concatenate([table[state.last_action], table[par.action]])[None, :]
        state.lstm = lstm_step(P, f"{PREFIX}.lstm", x, state.lstm)
        logits = affine(P, f"{PREFIX}.out", state.lstm.h)[0]
        row = mask.rows[g.nt_index[sid]]
        allowed = feasible_rules(g, row, t - 1, state.pending_cost, budget)
        if not allowed.any():
            raise AssertionError(f"no admissible action for {sym}")
        probs = ad.masked_softmax(logits, allowed)
        action = sample_index(probs, rng)
        if trace is not None:
            trace(sid, action, row, probs)
        node = state.builder.add(sid, pnode)
        rule = g.productions[action]
        if rule.is_epsilon:
            state.builder.add(g.epsilon.id, node)
        else:
            for s in reversed(rule.rhs):
                state.parent_stack.append(ParentRecord(sid, t, action))
                state.children_stack.append((s.id, node))
                state.pending_cost += _sym_cost(g, s.id)
    state.emitted.append(ActionStep(action, par.step, sid))
    state.last_action = action
    state.step += 1
    return action, state


def generate(model: GeneratorModel, g: Grammar, mask: MaskMatrix, budget: int,
             rng: np.random.Generator, trace: Callable | None = None) -> tuple[ParseTree, ActionSequence]:
    """Sample one complete tree and its action sequence."""
    need = g.completion_cost[g.start.id] + 1
    if budget < need:
        raise ValueError(f"budget {budget} below minimum {need} for start symbol {g.start}")
    state = init_state(model, g)
    P = model.store.bind(None)
    table = _embedding_table(P)
    while not state.closed:
        step(state, model, g, mask, rng, budget, P=P, table=table, trace=trace)
    if state.step - 1 > budget:
        raise AssertionError("budget exceeded")
    return state.builder.freeze(), state.sequence()


def sample_tree(model: GeneratorModel, g: Grammar, mask: MaskMatrix, budget: int,
                rng: np.random.Generator) -> ParseTree:
    return generate(model, g, mask, budget, rng)[0]


def sample_batch(model: GeneratorModel, g: Grammar, budget: int, n: int,
                 rng: np.random.Generator, mask: MaskMatrix | None = None) -> list[tuple[ParseTree, ActionSequence]]:
    mask = build_mask(g) if mask is None else mask
    return [generate(model, g, mask, budget, rng) for _ in range(n)]


# ---------------------------------------------------------------------------
# teacher forcing


@dataclass
class TeacherBatch:
    """Padded free-step inputs for a batch of action sequences."""

    prev: np.ndarray     # (B, S) embedding row of a_{t-1}
    parent: np.ndarray   # (B, S) embedding row of the parent action
    target: np.ndarray   # (B, S) production index
    allowed: np.ndarray  # (B, S, L) admissible actions
    valid: np.ndarray    # (B, S) 1.0 where the step exists
    step_index: list     # per sequence: 0-based positions of free steps

    @property
    def n_free(self) -> int:
        return int(self.valid.sum())


@dataclass
class PreparedSequence:
    """Free-step rows of one sequence, reusable across epochs."""

    prev: np.ndarray
    parent: np.ndarray
    target: np.ndarray
    allowed: np.ndarray  # (k, L)
    positions: list


def prepare_sequence(model: GeneratorModel, g: Grammar, seq, mask: MaskMatrix,
                     budget: int | None = None) -> PreparedSequence:
    nP, root = g.n_productions, model.root_action
    actions = seq.actions if isinstance(seq, ActionSequence) else tuple(int(a) for a in seq)
    r = Replay(g)
    rows = []
    for t, a in enumerate(actions, start=1):
        if r.done:
            r.apply(a)  # raises: trailing action
        sid, _, pstep = r.peek()
        if a < nP and not g.symbols[sid].is_terminal:
            rest = r.pending_cost - _sym_cost(g, sid)
            allowed = feasible_rules(g, mask.rows[g.nt_index[sid]], t - 1, rest, budget)
            if not allowed[a]:
                raise ReplayError(f"action {a} not admissible under budget {budget}", t)
            prev = root if t == 1 else actions[t - 2]
            par = root if pstep == 0 else actions[pstep - 1]
            rows.append((prev, par, a, allowed, t - 1))
        r.apply(a)
    if not r.done:
        r.tree()  # raises: premature end
    k = len(rows)
    return PreparedSequence(
        np.array([x[0] for x in rows], dtype=np.int64),
        np.array([x[1] for x in rows], dtype=np.int64),
        np.array([x[2] for x in rows], dtype=np.int64),
        np.array([x[3] for x in rows], dtype=bool).reshape(k, g.n_actions),
        [x[4] for x in rows],
    )


def collate(prepared: Sequence[PreparedSequence], n_actions: int) -> TeacherBatch:
    B = len(prepared)
    S = max((len(p.target) for p in prepared), default=0)
    prev = np.zeros((B, S), dtype=np.int64)
    parent = np.zeros((B, S), dtype=np.int64)
    target = np.zeros((B, S), dtype=np.int64)
    allowed = np.ones((B, S, n_actions), dtype=bool)
    valid = np.zeros((B, S))
    for b, p in enumerate(prepared):
        k = len(p.target)
        prev[b, :k], parent[b, :k], target[b, :k] = p.prev, p.parent, p.target
        allowed[b, :k] = p.allowed
        valid[b, :k] = 1.0
    return TeacherBatch(prev, parent, target, allowed, valid, [p.positions for p in prepared])


def teacher_batch(model: GeneratorModel, g: Grammar, seqs: Sequence[ActionSequence | Sequence[int]],
                  mask: MaskMatrix | None = None, budget: int | None = None) -> TeacherBatch:
    mask = build_mask(g) if mask is None else mask
    return collate([prepare_sequence(model, g, s, mask, budget) for s in seqs], g.n_actions)


def free_step_log_probs(model: GeneratorModel, batch: TeacherBatch, P) -> list:
    """Per free-step log-probabilities, one (B,) array/Var per padded position."""
    B, S = batch.prev.shape
    table = _embedding_table(P)
    state = LstmCellState.zeros(model.hidden, B)
    out = []
    for s in range(S):
        x = ad.concat([ad.take_rows(table, batch.prev[:, s]), ad.take_rows(table, batch.parent[:, s])], axis=1)
        state = lstm_step(P, f"{PREFIX}.lstm", x, state)
        logits = affine(P, f"{PREFIX}.out", state.h)
        out.append(ad.masked_log_softmax_pick(logits, batch.allowed[:, s], batch.target[:, s]))
    return out


def weighted_log_prob(model: GeneratorModel, batch: TeacherBatch, P, weights: np.ndarray):
    """``sum_b weights[b] * log G(seq_b)``; ``weights`` is (B,) or (B, S)."""
    cols = free_step_log_probs(model, batch, P)
    w = batch.valid * (weights[:, None] if weights.ndim == 1 else weights)
    acc = None
    for s, col in enumerate(cols):
        term = ad.dot_const(col, w[:, s])
        acc = term if acc is None else ad.add(acc, term)
    return acc if acc is not None else np.asarray(0.0)


def sequence_log_probs(model: GeneratorModel, g: Grammar, seqs, mask: MaskMatrix | None = None,
                       budget: int | None = None) -> np.ndarray:
    """Total log-probability of each sequence (forced terminal steps add 0)."""
    batch = teacher_batch(model, g, seqs, mask, budget)
    cols = free_step_log_probs(model, batch, model.store.bind(None))
    if not cols:
        return np.zeros(len(seqs))
    return (np.stack(cols, axis=1) * batch.valid).sum(axis=1)


def action_log_probs(model: GeneratorModel, g: Grammar, mask: MaskMatrix, seq: ActionSequence,
                     budget: int | None = None) -> np.ndarray:
    """Log-probability of every step of ``seq``; forced steps contribute 0."""
    model.check_grammar(g)
    batch = teacher_batch(model, g, [seq], mask, budget)
    cols = free_step_log_probs(model, batch, model.store.bind(None))
    out = np.zeros(len(seq))
    for s, pos in enumerate(batch.step_index[0]):
        out[pos] = cols[s][0]
    return out


def free_step_distributions(model: GeneratorModel, g: Grammar, seqs, mask: MaskMatrix | None = None,
                            budget: int | None = None) -> list[np.ndarray]:
    """Masked, renormalised action distributions at every free step of every sequence."""
    batch = teacher_batch(model, g, seqs, mask, budget)
    B, S = batch.prev.shape
    P = model.store.bind(None)
    table = _embedding_table(P)
    state = LstmCellState.zeros(model.hidden, B)
    per_step = []
    for s in range(S):
        x = np.concatenate([table[batch.prev[:, s]], table[batch.parent[:, s]]], axis=1)
        state = lstm_step(P, f"{PREFIX}.lstm", x, state)
        per_step.append(ad.masked_softmax(affine(P, f"{PREFIX}.out", state.h), batch.allowed[:, s]))
    out = []
    for b in range(B):
        k = int(batch.valid[b].sum())
        out.append(np.stack([per_step[s][b] for s in range(k)]) if k else np.zeros((0, g.n_actions)))
    return out


def nll_loss(model: GeneratorModel, batch: TeacherBatch, P):
    """Mean negative log-likelihood per free step."""
    n = max(batch.n_free, 1)
    return ad.scale(weighted_log_prob(model, batch, P, np.ones(batch.prev.shape[0])), -1.0 / n)


# ---------------------------------------------------------------------------
# enumeration (small budgets only)


def enumerate_sequences(g: Grammar, budget: int, mask: MaskMatrix | None = None) -> list[tuple[int, ...]]:
    """Every action sequence the budgeted sampler can produce."""
    mask = build_mask(g) if mask is None else mask
    out: list[tuple[int, ...]] = []

    def rec(actions: list[int]):
        r = Replay(g)
        for a in actions:
            r.apply(a)
        if r.done:
            out.append(tuple(actions))
            return
        sid, _, _ = r.peek()
        if g.symbols[sid].is_terminal:
            rec(actions + [g.n_productions + g.term_index[sid]])
            return
        t = len(actions) + 1
        rest = r.pending_cost - _sym_cost(g, sid)
        allowed = feasible_rules(g, mask.rows[g.nt_index[sid]], t - 1, rest, budget)
        for a in np.flatnonzero(allowed):
            rec(actions + [int(a)])

    rec([])
    return out


def default_budget(corpus: Sequence[ActionSequence]) -> int:
    """Four times the 95th-percentile corpus action length."""
    lengths = np.array([len(s) for s in corpus])
    return int(4 * np.ceil(np.percentile(lengths, 95)))


def replay(seq_actions: Sequence[int], g: Grammar) -> ActionSequence:
    return replay_actions(seq_actions, g)
