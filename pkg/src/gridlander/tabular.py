"""Tabular solvers over the enumerated landing MDP.

Value iteration produces the reference optimal policy used to audit the
learned agent. A tabular Q-learning pass applies the classic one-step
update Q <- (1-a) Q + a (r + g max Q') over deterministic exhaustive
sweeps; states are ordered by (altitude, horizontal distance) so value
information propagates backward from the pad within few sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import Action, LanderState, MdpTable, Terminal, transition


@dataclass
class TabularSolution:
    values: np.ndarray  # (n,) optimal state values over non-terminal rows
    q: np.ndarray  # (n, 5)
    policy: np.ndarray  # (n,) greedy action indices (lowest-index ties)
    sweeps: int


def value_iteration(mdp: MdpTable, gamma: float, tol: float = 1e-9, max_sweeps: int = 200000):
    """Sweep Bellman optimality backups until the sup-norm residual < tol."""
    n = mdp.n_nonterminal
    cont = ~mdp.next_is_terminal
    next_rows = np.zeros_like(mdp.next_index)
    for i in range(n):
        for a in range(5):
            if cont[i, a]:
                next_rows[i, a] = mdp._row_lookup[int(mdp.next_index[i, a])]
    values = np.zeros(n, dtype=np.float64)
    sweeps = 0
    while sweeps < max_sweeps:
        q = mdp.rewards + gamma * np.where(cont, values[next_rows], 0.0)
        new_values = q.max(axis=1)
        delta = np.abs(new_values - values).max()
        values = new_values
        sweeps += 1
        if delta < tol:
            break
    q = mdp.rewards + gamma * np.where(cont, values[next_rows], 0.0)
    policy = q.argmax(axis=1)
    return TabularSolution(values=values, q=q, policy=policy, sweeps=sweeps)


def policy_evaluation(
    mdp: MdpTable, policy: np.ndarray, gamma: float, tol: float = 1e-12, max_sweeps: int = 200000
) -> np.ndarray:
    """Iterative evaluation of a deterministic policy on the table."""
    n = mdp.n_nonterminal
    rows = np.arange(n)
    r_pi = mdp.rewards[rows, policy]
    cont_pi = ~mdp.next_is_terminal[rows, policy]
    next_pi = np.array(
        [
            mdp._row_lookup[int(mdp.next_index[i, policy[i]])] if cont_pi[i] else 0
            for i in range(n)
        ]
    )
    values = np.zeros(n, dtype=np.float64)
    for _ in range(max_sweeps):
        new_values = r_pi + gamma * np.where(cont_pi, values[next_pi], 0.0)
        delta = np.abs(new_values - values).max()
        values = new_values
        if delta < tol:
            break
    return values


def q_learning(mdp: MdpTable, gamma: float, alpha: float = 0.1, steps: int = 100000) -> np.ndarray:
    """Tabular Q-learning via Q <- (1-a) Q + a (r + g max Q(next)).

    Exploration is an exhaustive deterministic sweep over (state, action)
    pairs, ordered near-to-pad first so each sweep behaves like a damped
    Gauss-Seidel backup.
    """
    n = mdp.n_nonterminal
    order = sorted(
        range(n),
        key=lambda i: (
            mdp.states[mdp.nonterminal_indices[i]][2],
            abs(mdp.states[mdp.nonterminal_indices[i]][0])
            + abs(mdp.states[mdp.nonterminal_indices[i]][1]),
            mdp.states[mdp.nonterminal_indices[i]][0],
            mdp.states[mdp.nonterminal_indices[i]][1],
        ),
    )
    row_lookup = mdp._row_lookup
    q = np.zeros((n, 5), dtype=np.float64)
    done = 0
    while done < steps:
        for i in order:
            for a in range(5):
                r = mdp.rewards[i, a]
                if mdp.next_is_terminal[i, a]:
                    target = r
                else:
                    target = r + gamma * q[row_lookup[int(mdp.next_index[i, a])]].max()
                q[i, a] = (1.0 - alpha) * q[i, a] + alpha * target
                done += 1
                if done >= steps:
                    return q
    return q


def greedy_agreement(q_learned: np.ndarray, q_optimal: np.ndarray, tol: float = 1e-9) -> float:
    """Fraction of states where the learned greedy action is optimal.

    An action agrees when it attains the optimal Q within tol, so exact
    ties in the optimal table (symmetric states) are not disagreements.
    """
    best = q_optimal.max(axis=1, keepdims=True)
    optimal_set = q_optimal >= best - tol
    picks = q_learned.argmax(axis=1)
    return float(np.mean(optimal_set[np.arange(len(picks)), picks]))


def policy_rollout(
    mdp: MdpTable, policy: np.ndarray, start: LanderState, max_steps: int = 200
):
    """Follow a tabular policy from a start state on the live dynamics.

    Returns (states visited, total reward, terminal kind).
    """
    state = start
    states = [state]
    total = 0.0
    terminal = Terminal.NONE
    for _ in range(max_steps):
        row = mdp.row_of(state)
        out = transition(state, Action(int(policy[row])), mdp.config)
        total += out.reward
        state = out.next
        states.append(state)
        terminal = out.terminal
        if terminal is not Terminal.NONE:
            break
    else:
        terminal = Terminal.MAX_STEPS
    return states, total, terminal


def success_rate_from_all_starts(
    mdp: MdpTable, policy: np.ndarray, min_altitude: float = 2.0
) -> float:
    """Fraction of eligible start cells the policy lands successfully from."""
    successes = 0
    total = 0
    for idx in mdp.nonterminal_indices:
        s = mdp.state(int(idx))
        if s.dz < min_altitude - 1e-9:
            continue
        total += 1
        _, _, terminal = policy_rollout(mdp, policy, s, mdp.config.max_steps)
        if terminal is Terminal.LANDED_SUCCESS:
            successes += 1
    return successes / total if total else 0.0
