"""Training procedures: end-to-end, two-stage, semi-supervised, ablations."""
import math
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from crlc import kernels
from crlc.config import RunConfig, RunReport, seed_stream
from crlc.data import Dataset, _view, batches, gen_mixture, load_csv, make_views, sample_labeled
from crlc.losses import (
    cross_entropy_grad,
    entropy_grad,
    fc_loss_grad,
    inbatch_pc_loss_grad,
    pc_loss_grad,
    softmax_backward,
)
from crlc.memory_bank import MemoryBank
from crlc.metrics import evaluate
from crlc.model import ModelSpec, SgdState, TwoHeadModel, sgd_step

ABLATION_AXES = {
    "Critic": "critic",
    "Lambda2": "lambda2",
    "PcBackend": "pc_backend",
    "Momentum": "alpha",
    "NumNegatives": "bank_negatives",
}


def load_dataset(cfg: RunConfig) -> Dataset:
    d = cfg.dataset
    if d["kind"] == "csv":
        return load_csv(d["path"], d.get("class_count"))
    return gen_mixture(d["C"], d["D"], d["n_per_class"], d["separation"], d.get("seed", 0))


def build_model(cfg: RunConfig, ds: Dataset) -> TwoHeadModel:
    spec = ModelSpec(
        input_dim=ds.dim, n_clusters=ds.class_count, backbone=tuple(cfg.backbone),
        feature_dim=cfg.feature_dim, rl_hidden=cfg.rl_hidden, head_hidden=cfg.head_hidden,
        n_subheads=cfg.n_subheads,
    )
    return TwoHeadModel(spec, seed_stream(cfg.seed, "init"))


def mine_neighbors(features, K: int):
    """K highest-cosine rows for each row (itself excluded), ties by lowest index."""
    F = np.asarray(features, dtype=np.float64)
    n = len(F)
    if not 1 <= K < n:
        raise ValueError(f"need 1 <= K < N, got K={K}, N={n}")
    norms = np.linalg.norm(F, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("mine_neighbors expects unit-norm rows")
    return kernels.topk_cosine(F, K)


def cluster_terms(Q1, Q2, critic, lam1, banks=None, idx=None, n_candidates=None):
    """Symmetrized L_PC and marginal entropy for every sub-head.

    Q1, Q2: (S, B, C) probabilities of the two views. Without ``banks`` the
    candidates for an anchor are the other view's rows of the whole batch;
    with banks they are the sample's own bank row plus ``n_candidates - 1``
    sampled rows. Returns per-head L_PC, per-head entropy and dL/dQ for both
    views, where L is the sub-head mean of L_PC - lam1 * H.
    """
    S = Q1.shape[0]
    pcs, hs = np.zeros(S), np.zeros(S)
    dQ1, dQ2 = np.zeros_like(Q1), np.zeros_like(Q2)
    for s in range(S):
        if banks is None:
            la, dA1, dP2 = inbatch_pc_loss_grad(Q1[s], Q2[s], critic)
            lb, dA2, dP1 = inbatch_pc_loss_grad(Q2[s], Q1[s], critic)
            g1, g2 = dA1 + dP1, dA2 + dP2
        else:
            bank = banks[s]
            neg = bank.sample_indices(n_candidates - 1, idx)
            P = np.concatenate([bank.rows[idx][:, None, :], bank.rows[neg]], axis=1)
            la, g1, _ = pc_loss_grad(Q1[s], P, critic)
            lb, g2, _ = pc_loss_grad(Q2[s], P, critic)
            # read-then-write: the bank moves only after this step's loss
            bank.update(idx, 0.5 * (Q1[s] + Q2[s]))
        h1, dh1 = entropy_grad(Q1[s])
        h2, dh2 = entropy_grad(Q2[s])
        pcs[s] = 0.5 * (la + lb)
        hs[s] = 0.5 * (h1 + h2)
        dQ1[s] = (0.5 * g1 - 0.5 * lam1 * dh1) / S
        dQ2[s] = (0.5 * g2 - 0.5 * lam1 * dh2) / S
    return pcs, hs, dQ1, dQ2


def fc_terms(z1, z2, tau):
    """Symmetrized L_FC with gradients for both views."""
    la, dz1a, dz2a = fc_loss_grad(z1, z2, tau)
    lb, dz2b, dz1b = fc_loss_grad(z2, z1, tau)
    return 0.5 * (la + lb), 0.5 * (dz1a + dz1b), 0.5 * (dz2a + dz2b)


def crlc_step(model, v1, v2, critic, weights, banks=None, idx=None, n_candidates=None):
    """Forward both views, evaluate L_CRLC and accumulate its gradients.

    Returns ``(total, per-head L_PC, per-head entropy, L_FC)``.
    """
    o1, o2 = model.forward(v1), model.forward(v2)
    pcs, hs, dQ1, dQ2 = cluster_terms(o1.probs, o2.probs, critic, weights.entropy, banks, idx, n_candidates)
    lfc, dz1, dz2 = fc_terms(o1.z, o2.z, critic.tau)
    total = float(np.mean(pcs - weights.entropy * hs) + weights.fc * lfc)
    if weights.fc > 0:
        dz1, dz2 = weights.fc * dz1, weights.fc * dz2
    else:
        dz1 = dz2 = None
    model.backward(o1.cache, dz1, softmax_backward(o1.probs, dQ1))
    model.backward(o2.cache, dz2, softmax_backward(o2.probs, dQ2))
    return total, pcs, hs, lfc


class _Run:
    """State shared by all procedures: data, model, optimizer, RNG streams."""

    def __init__(self, cfg: RunConfig):
        cfg.validate()
        self.cfg = cfg
        self.ds = load_dataset(cfg)
        if cfg.batch_size > len(self.ds):
            raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {len(self.ds)}")
        self.model = build_model(cfg, self.ds)
        self.critic = cfg.critic_config()
        self.weights = cfg.loss_weights()
        self.views = cfg.view_config()
        self.batch_rng = seed_stream(cfg.seed, "batch")
        self.aug_rng = seed_stream(cfg.seed, "augment")
        self.banks = None
        if cfg.pc_backend == "MemoryBank":
            if cfg.n_candidates > len(self.ds):
                raise ValueError("bank_negatives exceeds dataset size")
            bank_rng = seed_stream(cfg.seed, "bank")
            self.banks = [
                MemoryBank(len(self.ds), self.ds.class_count, cfg.alpha, bank_rng.integers(2**63))
                for _ in range(cfg.n_subheads)
            ]
        self.report = RunReport(config=cfg.to_dict(), seed=cfg.seed)
        self.head_losses = np.zeros(cfg.n_subheads)
        self.t0 = time.perf_counter()

    # -- evaluation ----------------------------------------------------------

    def predict(self, head=None):
        out = self.model.forward(self.ds.features)
        if head is None:
            head = int(np.argmin(self.head_losses))
        return out.probs[head].argmax(axis=1), out

    def evaluate(self, mapping="hungarian", head=None):
        truth = self.ds.labels
        mask = truth >= 0
        if not mask.any():
            return {"acc": None, "nmi": None, "ari": None}
        pred, _ = self.predict(head)
        m = evaluate(pred[mask], truth[mask])
        if mapping == "identity":
            m["acc"] = float(np.mean(pred[mask] == truth[mask]))
        return m

    def record(self, stage, epoch, lr, sums, n_steps, evaluate_now, mapping="hungarian", head=None):
        def mean(key):
            return None if key not in sums else float(sums[key] / n_steps)

        M = self.cfg.n_candidates
        rec = {
            "stage": stage, "epoch": epoch, "lr": float(lr),
            "loss_total": mean("total"), "loss_pc": mean("pc"), "loss_fc": mean("fc"),
            "loss_ce": mean("ce"), "entropy": mean("entropy"),
        }
        rec["infonce_pc"] = None if rec["loss_pc"] is None else math.log(M) - rec["loss_pc"]
        rec["infonce_fc"] = None if rec["loss_fc"] is None else math.log(self.cfg.batch_size) - rec["loss_fc"]
        metrics = self.evaluate(mapping, head) if evaluate_now else {"acc": None, "nmi": None, "ari": None}
        rec.update(metrics)
        self.report.per_epoch.append(rec)

    def finish(self, mapping="hungarian", head=None):
        self.report.final_metrics = self.evaluate(mapping, head)
        self.report.runtime_s = time.perf_counter() - self.t0
        self.report.model = self.model
        return self.report

    def sgd(self, epochs, lr_init):
        c = self.cfg
        return SgdState(
            lr_init=lr_init, lr_min=min(c.lr_min, lr_init), momentum=c.momentum,
            weight_decay=c.weight_decay, schedule=c.schedule, horizon=epochs,
        )


def _should_eval(epoch, total, every):
    return epoch == total or epoch % every == 0


def _clustering_loop(run: _Run, labeled=None, mapping="hungarian", eval_head=None):
    cfg = run.cfg
    model, X = run.model, run.ds.features
    state = run.sgd(cfg.epochs, cfg.lr_init)
    lam3 = run.weights.ce
    if labeled is not None:
        lab_rng = seed_stream(cfg.seed, "labeled")
        lab_y = run.ds.labels[labeled]
    for epoch in range(1, cfg.epochs + 1):
        state.epoch = epoch - 1
        lr = state.lr
        sums = dict(total=0.0, pc=0.0, fc=0.0, entropy=0.0)
        if labeled is not None:
            sums["ce"] = 0.0
        head_sum = np.zeros(cfg.n_subheads)
        n_steps = 0
        for idx in batches(len(X), cfg.batch_size, run.batch_rng):
            v1, v2 = make_views(X[idx], run.views, run.aug_rng)
            total, pcs, hs, lfc = crlc_step(model, v1, v2, run.critic, run.weights,
                                            run.banks, idx, cfg.n_candidates)
            cluster = pcs - run.weights.entropy * hs
            if labeled is not None:
                take = min(cfg.labeled_batch, len(labeled))
                sel = lab_rng.choice(len(labeled), size=take, replace=False)
                vl = _view(X[labeled[sel]], run.views, lab_rng)
                ol = model.forward(vl)
                # every sub-head gets the cross-entropy term, as it gets L_cluster
                S = cfg.n_subheads
                ces = np.zeros(S)
                dQl = np.zeros_like(ol.probs)
                for s in range(S):
                    ces[s], dq = cross_entropy_grad(ol.probs[s], lab_y[sel])
                    dQl[s] = lam3 * dq / S
                if lam3 > 0:
                    model.backward(ol.cache, None, softmax_backward(ol.probs, dQl))
                ce = float(ces.mean())
                total += lam3 * ce
                cluster = cluster + lam3 * ces
                sums["ce"] += ce
            sgd_step(model, state)
            sums["total"] += total
            sums["pc"] += pcs.mean()
            sums["fc"] += lfc
            sums["entropy"] += hs.mean()
            head_sum += cluster
            n_steps += 1
        run.head_losses = head_sum / n_steps
        run.record(1, epoch, lr, sums, n_steps, _should_eval(epoch, cfg.epochs, cfg.eval_every),
                   mapping, eval_head)
    return run.finish(mapping, eval_head)


def train_end_to_end(cfg: RunConfig) -> RunReport:
    """Jointly minimize L_PC - lambda1 H + lambda2 L_FC over the whole model."""
    return _clustering_loop(_Run(cfg))


def train_semi(cfg: RunConfig, labeled=None) -> RunReport:
    """End-to-end objective plus lambda3 * cross-entropy on a labeled subset,
    averaged over sub-heads. Accuracy uses the identity cluster -> class map
    on the sub-head with the lowest L_cluster + lambda3 * cross-entropy."""
    run = _Run(cfg)
    if labeled is None:
        labeled = sample_labeled(run.ds, cfg.labels_per_class, seed_stream(cfg.seed, "labeled-pick"))
    labeled = np.asarray(labeled, dtype=np.int64)
    if labeled.size == 0:
        raise ValueError("semi-supervised training needs at least one labeled sample")
    if np.any(run.ds.labels[labeled] < 0):
        raise ValueError("labeled indices point at unlabeled rows")
    run.report.extra["labeled_indices"] = labeled.tolist()
    return _clustering_loop(run, labeled=labeled, mapping="identity")


def train_two_stage(cfg: RunConfig) -> RunReport:
    """Stage 1: L_FC on backbone + RL head. Then mine cosine neighbors and
    train the clustering heads with neighbor positives under L_cluster."""
    run = _Run(cfg)
    run.banks = None  # neighbor positives come from the batch, not a bank
    model, X = run.model, run.ds.features

    rl_names = model.group("backbone.") + model.group("rl.")
    state = run.sgd(cfg.stage1_epochs, cfg.lr_init)
    for epoch in range(1, cfg.stage1_epochs + 1):
        state.epoch = epoch - 1
        lr = state.lr
        sums, n_steps = dict(total=0.0, fc=0.0), 0
        for idx in batches(len(X), cfg.batch_size, run.batch_rng):
            v1, v2 = make_views(X[idx], run.views, run.aug_rng)
            o1, o2 = model.forward(v1), model.forward(v2)
            lfc, dz1, dz2 = fc_terms(o1.z, o2.z, run.critic.tau)
            model.backward(o1.cache, dz1, None)
            model.backward(o2.cache, dz2, None)
            sgd_step(model, state, rl_names)
            sums["total"] += lfc
            sums["fc"] += lfc
            n_steps += 1
        run.record(1, epoch, lr, sums, n_steps, False)

    feats = model.forward(X).z
    neighbors = mine_neighbors(feats, cfg.n_neighbors)
    same = run.ds.labels[neighbors] == run.ds.labels[:, None]
    run.report.extra["neighbor_purity"] = float(same.mean())

    if cfg.stage2_mode == "FreezeBackbone":
        model.freeze("backbone.")
    names = model.group("c.") + ([] if cfg.stage2_mode == "FreezeBackbone" else model.group("backbone."))
    run.report.extra["backbone_checksum_stage2_start"] = model.backbone_checksum()
    nbr_rng = seed_stream(cfg.seed, "neighbors")
    state = run.sgd(cfg.epochs, cfg.stage2_lr)
    lam1 = run.weights.entropy
    for epoch in range(1, cfg.epochs + 1):
        state.epoch = epoch - 1
        lr = state.lr
        sums, n_steps = dict(total=0.0, pc=0.0, entropy=0.0), 0
        head_sum = np.zeros(cfg.n_subheads)
        for idx in batches(len(X), cfg.batch_size, run.batch_rng):
            pos = neighbors[idx, nbr_rng.integers(0, cfg.n_neighbors, size=len(idx))]
            va = _view(X[idx], run.views, run.aug_rng)
            vp = _view(X[pos], run.views, run.aug_rng)
            oa, op = model.forward(va), model.forward(vp)
            pcs, hs, dQa, dQp = cluster_terms(oa.probs, op.probs, run.critic, lam1)
            model.backward(oa.cache, None, softmax_backward(oa.probs, dQa))
            model.backward(op.cache, None, softmax_backward(op.probs, dQp))
            sgd_step(model, state, names)
            cluster = pcs - lam1 * hs
            sums["total"] += cluster.mean()
            sums["pc"] += pcs.mean()
            sums["entropy"] += hs.mean()
            head_sum += cluster
            n_steps += 1
        run.head_losses = head_sum / n_steps
        run.record(2, epoch, lr, sums, n_steps, _should_eval(epoch, cfg.epochs, cfg.eval_every))
    run.report.extra["backbone_checksum_stage2_end"] = model.backbone_checksum()
    return run.finish()


def _sweep_one(args):
    cfg, field_name, value = args
    return train_end_to_end(cfg.replace(**{field_name: value}))


def ablation_sweep(base: RunConfig, axis: str, values, jobs: int = 1):
    """One end-to-end run per value along ``axis``; same seeds throughout."""
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {sorted(ABLATION_AXES)}")
    field_name = ABLATION_AXES[axis]
    if axis in ("Momentum", "NumNegatives") and base.pc_backend != "MemoryBank":
        base = base.replace(pc_backend="MemoryBank")
    tasks = [(base, field_name, v) for v in values]
    for _, f, v in tasks:
        base.replace(**{f: v})  # validate before spending any compute
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_sweep_one, tasks))
    return [_sweep_one(t) for t in tasks]
