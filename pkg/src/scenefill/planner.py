"""View-path planners over the completion environment.

Featurization is shared: each candidate view contributes a row
[hole share, visited, guided mean hole depth, step progress], the actor
scores all rows jointly from the flattened matrix, and the critic reads
the view-pooled mean. Both learners are linear; the asynchronous
advantage actor-critic shares parameters through a locked store, the
value learner is a double deep-Q update on the same features.

Sign conventions: actor gradients are ascent directions on
log pi(a) * advantage with the advantage held constant; critic and Q
gradients are true loss gradients (descent applies them with a minus).
The critic loss is the squared advantage, differentiated through both
the current and the bootstrapped value term.
"""

from __future__ import annotations

import json
import struct
import threading

import numpy as np

FEATURES_PER_VIEW = 4


def view_features(env):
    """(n_views, 4) feature rows for the current episode state."""
    st = env.state
    if st is None:
        raise RuntimeError("environment not reset")
    n = len(env.actions)
    counts = env.hole_counts().astype(np.float64)
    feats = np.zeros((n, FEATURES_PER_VIEW), dtype=np.float64)
    feats[:, 0] = counts / max(st.area0, 1)
    feats[:, 1] = st.visited.astype(np.float64)
    feats[:, 2] = env.guided_depth_means()
    feats[:, 3] = st.step_idx / env.config.step_cap
    return feats


def init_policy(n_actions, n_features=FEATURES_PER_VIEW):
    theta = np.zeros((n_actions, n_actions * n_features), dtype=np.float64)
    theta_v = np.zeros(n_features, dtype=np.float64)
    return theta, theta_v


def policy_forward(theta, feats, mask_visited=False, visited=None):
    """Action probabilities from flattened features."""
    logits = theta @ feats.ravel()
    if mask_visited and visited is not None and not visited.all():
        logits = logits.copy()
        logits[visited] = -np.inf
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def value_forward(theta_v, feats):
    return float(theta_v @ feats.mean(axis=0))


def clip_norm(g, limit):
    n = float(np.linalg.norm(g))
    if n > limit:
        return g * (limit / n)
    return g


def advantage(theta_v, feats, feats_next, reward, done, discount):
    v_now = value_forward(theta_v, feats)
    v_next = value_forward(theta_v, feats_next)
    return reward + discount * v_next * (0.0 if done else 1.0) - v_now


def actor_gradient(theta, feats, action, adv):
    """Ascent direction of log pi(action) * adv, adv treated as data."""
    x = feats.ravel()
    probs = policy_forward(theta, feats)
    sel = -probs
    sel[action - 1] += 1.0
    return adv * np.outer(sel, x)


def critic_gradient(theta_v, feats, feats_next, reward, done, discount):
    """Loss gradient of the squared advantage, including the bootstrap
    term's dependence on theta_v."""
    adv = advantage(theta_v, feats, feats_next, reward, done, discount)
    pool_now = feats.mean(axis=0)
    pool_next = feats_next.mean(axis=0)
    d_adv = (discount * (0.0 if done else 1.0)) * pool_next - pool_now
    return 2.0 * adv * d_adv, adv


def a3c_gradients(theta, theta_v, feats, action, reward, feats_next, done,
                  discount):
    g_v, adv = critic_gradient(theta_v, feats, feats_next, reward, done,
                               discount)
    g_theta = actor_gradient(theta, feats, action, adv)
    return g_theta, g_v, adv


class ParamStore:
    """Shared actor-critic parameters with locked read/update."""

    def __init__(self, theta, theta_v, lr_actor, lr_critic, clip):
        self._theta = np.array(theta, dtype=np.float64)
        self._theta_v = np.array(theta_v, dtype=np.float64)
        self.lr_actor = lr_actor
        self.lr_critic = lr_critic
        self.clip = clip
        self._lock = threading.Lock()

    def snapshot(self):
        with self._lock:
            return self._theta.copy(), self._theta_v.copy()

    def apply(self, g_theta, g_theta_v):
        with self._lock:
            self._theta += self.lr_actor * clip_norm(g_theta, self.clip)
            self._theta_v -= self.lr_critic * clip_norm(g_theta_v, self.clip)


def select_action(values, mode, rng=None, eps=0.0):
    """1-based action choice. ``values`` are probabilities for "sample",
    otherwise scores; argmax ties go to the lowest index."""
    n = values.shape[0]
    if mode == "sample":
        return int(rng.choice(n, p=values)) + 1
    if mode == "argmax":
        return int(np.argmax(values)) + 1
    if mode == "epsilon":
        if rng.random() < eps:
            return int(rng.integers(n)) + 1
        return int(np.argmax(values)) + 1
    raise ValueError(f"unknown mode: {mode}")


def uniform_plan(k, n_actions=20):
    """k actions evenly strided across the space, starting at 1."""
    if not 1 <= k <= n_actions:
        raise ValueError("plan size out of range")
    return [1 + (i * n_actions) // k for i in range(k)]


def greedy_hole(env):
    """Unvisited view with the most holes; lowest index breaks ties. With
    every view visited, falls back to the fewest-holes view."""
    counts = env.hole_counts()
    visited = env.state.visited
    if not visited.all():
        masked = np.where(visited, -1, counts)
        return int(np.argmax(masked)) + 1
    return int(np.argmin(counts)) + 1


def policy_chooser(theta, mode="argmax", rng=None, mask_visited=False):
    def choose(env):
        feats = view_features(env)
        probs = policy_forward(theta, feats, mask_visited,
                               env.state.visited)
        return select_action(probs, mode, rng)
    return choose


def q_chooser(theta):
    def choose(env):
        feats = view_features(env)
        return select_action(theta @ feats.ravel(), "argmax")
    return choose


def plan_chooser(plan):
    state = {"i": 0}

    def choose(env):
        a = plan[state["i"] % len(plan)]
        state["i"] += 1
        return a
    return choose


def random_chooser(rng):
    def choose(env):
        return int(rng.integers(len(env.actions))) + 1
    return choose


def run_episode(env, chooser):
    """Play one episode to completion; returns (trace, total reward)."""
    from .mdp import TraceRecord

    st = env.reset()
    records = []
    total = 0.0
    while not st.done:
        action = chooser(env)
        st, br, done = env.step(action)
        total += br.total
        records.append(TraceRecord(
            step=st.step_idx, action=action, omega=br.omega, r_acc=br.acc,
            r_pcacc=br.pcacc, r_hole=br.hole, r_total=br.total,
            hole_area=br.hole_area, n_new_points=br.n_new_points,
            done=done))
    return records, total


def _write_curve(path, rows):
    if path is None:
        return
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def train_a3c(envs, config, seed=0, episodes=None, n_workers=None,
              curve_path=None):
    """Asynchronous advantage actor-critic over a set of environments.

    Workers pull episode indices from a shared counter, snapshot the
    store before every step, and push per-step gradients back. A single
    worker is bit-reproducible for a fixed seed.
    """
    if not envs:
        raise ValueError("need at least one environment")
    episodes = config.episodes if episodes is None else episodes
    n_workers = config.n_workers if n_workers is None else n_workers
    n_actions = len(envs[0].actions)
    theta0, theta_v0 = init_policy(n_actions)
    store = ParamStore(theta0, theta_v0, config.lr_actor, config.lr_critic,
                       config.grad_clip)
    counter = {"next": 0}
    counter_lock = threading.Lock()
    rows = [None] * episodes

    def worker(wid):
        rng = np.random.default_rng(seed * 7919 + wid)
        while True:
            with counter_lock:
                ep = counter["next"]
                if ep >= episodes:
                    return
                counter["next"] = ep + 1
            env = envs[ep % len(envs)]
            st = env.reset()
            feats = view_features(env)
            total, steps = 0.0, 0
            while not st.done:
                theta, theta_v = store.snapshot()
                probs = policy_forward(theta, feats, config.mask_visited,
                                       st.visited)
                action = select_action(probs, "sample", rng)
                st, br, done = env.step(action)
                feats_next = view_features(env)
                g_t, g_v, _ = a3c_gradients(theta, theta_v, feats, action,
                                            br.total, feats_next, done,
                                            config.discount)
                store.apply(g_t, g_v)
                feats = feats_next
                total += br.total
                steps += 1
            rows[ep] = {"episode": ep, "worker": wid, "return": total,
                        "steps": steps,
                        "hole_ratio": st.area_now / max(st.area0, 1)}

    if n_workers == 1:
        worker(0)
    else:
        threads = [threading.Thread(target=worker, args=(w,))
                   for w in range(n_workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    _write_curve(curve_path, [r for r in rows if r is not None])
    theta, theta_v = store.snapshot()
    return theta, theta_v, [r for r in rows if r is not None]


class ReplayBuffer:
    def __init__(self, capacity):
        self.capacity = capacity
        self._data = []
        self._next = 0

    def __len__(self):
        return len(self._data)

    def push(self, item):
        if len(self._data) < self.capacity:
            self._data.append(item)
        else:
            self._data[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def sample(self, rng, batch_size):
        idx = rng.integers(len(self._data), size=batch_size)
        return [self._data[i] for i in idx]


def dqn_gradients(theta, theta_target, batch, discount):
    """Mean squared error gradient for double-Q targets: the online net
    picks the next action, the target net scores it. Targets are data."""
    g = np.zeros_like(theta)
    loss = 0.0
    inv = 1.0 / len(batch)
    for x, action, reward, x_next, done in batch:
        q = float(theta[action - 1] @ x)
        if done:
            y = reward
        else:
            a_star = int(np.argmax(theta @ x_next))
            y = reward + discount * float(theta_target[a_star] @ x_next)
        diff = q - y
        loss += diff * diff * inv
        g[action - 1] += 2.0 * diff * inv * x
    return g, loss


def train_dqn(envs, config, seed=0, episodes=None, curve_path=None):
    """Double deep-Q learning on the shared featurization, with a replay
    buffer, a periodically refreshed target net, and linearly annealed
    exploration."""
    if not envs:
        raise ValueError("need at least one environment")
    episodes = config.episodes if episodes is None else episodes
    rng = np.random.default_rng(seed)
    n_actions = len(envs[0].actions)
    theta = np.zeros((n_actions, n_actions * FEATURES_PER_VIEW),
                     dtype=np.float64)
    target = theta.copy()
    replay = ReplayBuffer(config.replay_capacity)
    rows = []
    updates = 0
    for ep in range(episodes):
        frac = ep / max(episodes - 1, 1)
        eps = config.eps_start + (config.eps_end - config.eps_start) * frac
        env = envs[ep % len(envs)]
        st = env.reset()
        feats = view_features(env)
        total, steps = 0.0, 0
        while not st.done:
            action = select_action(theta @ feats.ravel(), "epsilon", rng,
                                   eps)
            st, br, done = env.step(action)
            feats_next = view_features(env)
            replay.push((feats.ravel(), action, br.total,
                         feats_next.ravel(), done))
            if len(replay) >= config.batch_size:
                batch = replay.sample(rng, config.batch_size)
                g, _ = dqn_gradients(theta, target, batch, config.discount)
                theta -= config.lr_q * clip_norm(g, config.grad_clip)
                updates += 1
                if updates % config.target_refresh == 0:
                    target = theta.copy()
            feats = feats_next
            total += br.total
            steps += 1
        rows.append({"episode": ep, "return": total, "steps": steps,
                     "eps": eps,
                     "hole_ratio": st.area_now / max(st.area0, 1)})
    _write_curve(curve_path, rows)
    return theta, rows


_PARAM_MAGIC = b"SFPRM1\n"


def save_params(path, kind, *arrays):
    """Versioned binary dump: magic, kind byte, per-array rank/shape, then
    float64 payloads in order."""
    if kind not in ("actor_critic", "dqn"):
        raise ValueError(f"unknown kind: {kind}")
    with open(path, "wb") as fh:
        fh.write(_PARAM_MAGIC)
        fh.write(b"A" if kind == "actor_critic" else b"Q")
        fh.write(struct.pack("<B", len(arrays)))
        for arr in arrays:
            a = np.asarray(arr, dtype=np.float64)
            fh.write(struct.pack("<B", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes(order="C"))


def load_params(path):
    """Returns (kind, [arrays])."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_PARAM_MAGIC))
        if magic != _PARAM_MAGIC:
            raise ValueError("not a parameter file")
        tag = fh.read(1)
        if tag == b"A":
            kind = "actor_critic"
        elif tag == b"Q":
            kind = "dqn"
        else:
            raise ValueError(f"unknown parameter kind tag: {tag!r}")
        (count,) = struct.unpack("<B", fh.read(1))
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            raw = fh.read(8 * n)
            if len(raw) != 8 * n:
                raise ValueError("truncated parameter file")
            arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
        return kind, arrays
