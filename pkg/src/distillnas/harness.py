"""Experiment driver behind the CLI: data generation, teacher training,
weight-sharing search, constrained selection + retraining, the ablation
grid, and the finite-difference gradient suite.

Artifact layout under the output directory:
  data/      train.kdtd val.kdtd test.kdtd meta.json
  teacher/   member{i}.odtw logits.odtw manifest.json histogram.csv
  search/    pool.odtw controller.odtw reward_curve.csv leaderboard.json
  final/     selection.json final_seed{s}.odtw metrics.csv run_record.json
  ablation/  ablation.csv (plus per-cell search artifacts)
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import data as datamod
from . import ensemble as ensmod
from . import losses, ops
from .backbone import build_network, deepen, widen
from .controller import (
    BaselineState,
    ControllerPolicy,
    baseline_converged,
    reinforce_update,
    sample_architecture,
)
from .gradcheck import grad_check
from .optim import SgdState
from .search_space import (
    ArchitectureGenome,
    SlotLayout,
    backbone_param_count,
    genome_param_count,
    neutral_genome,
)
from .selection import full_val_reward, retrain, select_best
from .serialize import save_tensors
from .supernet import SharedPool, batch_reward, train_shared_step
from .tensor import Tensor, record
from .training import train_model


def _say(log, msg):
    if log is not None:
        log(msg)


def resolve_out(cfg: dict, out=None) -> Path:
    return Path(out) if out is not None else Path(cfg["out_dir"])


def _distill(cfg) -> losses.DistillConfig:
    return losses.DistillConfig(temperature=cfg["temperature"], balance=cfg["balance"])


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(cfg: dict, out=None, log=None) -> dict:
    out_dir = resolve_out(cfg, out) / "data"
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = cfgmod.stream(cfg["seed"], "data")
    kind = cfg["dataset_kind"]
    if kind == "gaussian":
        train_x, train_y, test_x, test_y = datamod.gaussian_classes(
            rng,
            num_classes=cfg["num_classes"],
            n_train=cfg["train_size"],
            n_test=cfg["test_size"],
            channels=cfg["channels"],
            size=cfg["image_size"],
            separation=cfg["separation"],
        )
    elif kind == "textured":
        train_x, train_y, test_x, test_y = datamod.textured_patches(
            rng,
            num_classes=cfg["num_classes"],
            n_train=cfg["train_size"],
            n_test=cfg["test_size"],
            channels=cfg["channels"],
            size=cfg["image_size"],
            noise=cfg["dataset_noise"],
        )
    else:  # external: comma-separated train,test record files
        parts = cfg["external_path"].split(",")
        if len(parts) != 2:
            raise cfgmod.ConfigError(
                "external_path must be 'train_file,test_file' for dataset_kind=external"
            )
        train_x, train_y = datamod.convert_external_binary(
            parts[0], cfg["image_size"], cfg["channels"]
        )
        test_x, test_y = datamod.convert_external_binary(
            parts[1], cfg["image_size"], cfg["channels"]
        )
    (train_xy, val_xy) = datamod.split_train_val(rng, train_x, train_y, 0.1)
    nc = cfg["num_classes"]
    datamod.write_kdtd(out_dir / "train.kdtd", train_xy[0], train_xy[1], nc)
    datamod.write_kdtd(out_dir / "val.kdtd", val_xy[0], val_xy[1], nc)
    datamod.write_kdtd(out_dir / "test.kdtd", test_x, test_y, nc)
    meta = {
        "kind": kind,
        "num_classes": nc,
        "train": len(train_xy[1]),
        "val": len(val_xy[1]),
        "test": len(test_y),
        "image_size": cfg["image_size"],
        "channels": cfg["channels"],
        "config_hash": cfgmod.config_hash(cfg),
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    _say(log, f"wrote {meta['train']}/{meta['val']}/{meta['test']} examples to {out_dir}")
    return meta


def _load_bundle(cfg, out, data_dir=None) -> datamod.DataBundle:
    d = Path(data_dir) if data_dir is not None else resolve_out(cfg, out) / "data"
    if not (d / "train.kdtd").exists():
        raise FileNotFoundError(f"no dataset under {d}; run gen-data first")
    return datamod.load_bundle(d, augment=cfg["augment"])


# ---------------------------------------------------------------------------
# train-teacher


def cmd_train_teacher(cfg: dict, out=None, data_dir=None, log=None) -> dict:
    bundle = _load_bundle(cfg, out, data_dir)
    spec = cfgmod.backbone_from_config(cfg)
    schedule = cfgmod.teacher_schedule(cfg)
    member_seeds = [
        int(cfgmod.stream(cfg["seed"], "teacher", i).integers(0, 2**63 - 1))
        for i in range(cfg["ensemble_size"])
    ]
    members, results = ensmod.train_ensemble(bundle, spec, schedule, member_seeds, log=log)
    teacher_dir = resolve_out(cfg, out) / "teacher"
    manifest = ensmod.save_ensemble(teacher_dir, members, member_seeds, results, bundle, spec)
    _say(
        log,
        f"oracle {manifest['oracle_test_acc']:.3f} vs avg member "
        f"{manifest['avg_member_test_acc']:.3f} vs ensemble {manifest['ensemble_test_acc']:.3f}",
    )
    return manifest


# ---------------------------------------------------------------------------
# search


def _cycle_batches(rng, n, batch_size):
    while True:
        yield from datamod.batch_indices(rng, n, batch_size)


def cmd_search(
    cfg: dict, out=None, data_dir=None, teacher_dir=None, search_dir=None, log=None
) -> dict:
    bundle = _load_bundle(cfg, out, data_dir)
    tdir = Path(teacher_dir) if teacher_dir is not None else resolve_out(cfg, out) / "teacher"
    manifest = ensmod.load_manifest(tdir)  # missing manifest -> hard error
    logits = ensmod.load_logits(tdir)
    spec = cfgmod.backbone_from_config(cfg)
    layout = SlotLayout.even(cfg["slots"], len(spec.stages))
    distill = _distill(cfg)

    root = cfg["seed"]
    pool = SharedPool(spec, layout, cfgmod.stream(root, "search"))
    policy = ControllerPolicy(
        layout, spec.backbone_id, cfgmod.stream(root, "controller"), hidden=cfg["controller_hidden"]
    )
    baseline = BaselineState(beta=cfg["baseline_beta"])
    sgd_shared = SgdState(
        cfg["base_lr"], momentum=cfg["momentum"], weight_decay=cfg["weight_decay"]
    )
    sgd_ctrl = SgdState(cfg["controller_lr"], momentum=0.9, weight_decay=0.0, nesterov=False)
    sample_rng = cfgmod.stream(root, "sampling")
    shared_rng = cfgmod.stream(root, "search", 1)
    val_batches = _cycle_batches(cfgmod.stream(root, "search", 2), len(bundle.val_y), cfg["reward_batch"])

    # warm-up: train the shared trunk on the neutral genome before any
    # sampled steps, so rewards in the sampled rounds are measured against a
    # trunk that has actually learned something
    anchor = neutral_genome(spec, layout)
    for epoch in range(cfg["search_warmup_epochs"]):
        warm_loss, n_batches = 0.0, 0
        for idx in datamod.batch_indices(shared_rng, len(bundle.train_y), cfg["batch_size"]):
            batch = (bundle.train_x[idx], bundle.train_y[idx])
            warm_loss += train_shared_step(
                pool,
                anchor,
                batch,
                logits["train"][:, idx],
                distill,
                sgd_shared,
                loss_kind=cfg["search_loss"],
            )
            n_batches += 1
        _say(log, f"warmup {epoch}: shared loss {warm_loss / max(n_batches, 1):.4f}")

    sgd_shared.lr = cfg["search_lr"]
    curve = []
    best_reward: dict[ArchitectureGenome, float] = {}
    update_idx = 0
    converged = False
    for round_idx in range(cfg["search_rounds"]):
        # phase 1: one epoch of shared-weight training on sampled genomes
        epoch_loss, n_batches = 0.0, 0
        for idx in datamod.batch_indices(shared_rng, len(bundle.train_y), cfg["batch_size"]):
            genome, _ = sample_architecture(policy, sample_rng)
            batch = (bundle.train_x[idx], bundle.train_y[idx])
            epoch_loss += train_shared_step(
                pool,
                genome,
                batch,
                logits["train"][:, idx],
                distill,
                sgd_shared,
                loss_kind=cfg["search_loss"],
            )
            n_batches += 1
        # phase 2: REINFORCE updates from single-batch rewards
        for _ in range(cfg["controller_updates_per_round"]):
            samples = []
            for _ in range(cfg["samples_per_update"]):
                genome, _ = sample_architecture(policy, sample_rng)
                vidx = next(val_batches)
                r = batch_reward(pool, genome, (bundle.val_x[vidx], bundle.val_y[vidx]))
                samples.append((genome, r))
                if r > best_reward.get(genome, -1.0):
                    best_reward[genome] = r
            mean_r = reinforce_update(
                policy, samples, baseline, sgd_ctrl, entropy_coef=cfg["entropy_coef"]
            )
            curve.append((update_idx, mean_r, baseline.value))
            update_idx += 1
            if baseline_converged(baseline):
                converged = True
                break
        _say(
            log,
            f"round {round_idx}: shared loss {epoch_loss / max(n_batches, 1):.4f}, "
            f"baseline {baseline.value:.3f}",
        )
        if converged:
            break

    sdir = Path(search_dir) if search_dir is not None else resolve_out(cfg, out) / "search"
    sdir.mkdir(parents=True, exist_ok=True)
    pool.save(sdir / "pool.odtw")
    policy.save(sdir / "controller.odtw")
    _write_csv(sdir / "reward_curve.csv", ("update", "mean_reward", "baseline"), curve)
    leaders = sorted(best_reward.items(), key=lambda kv: (-kv[1], kv[0].sort_key()))[:10]
    (sdir / "leaderboard.json").write_text(
        json.dumps(
            [{"genome": json.loads(g.to_json()), "reward": r} for g, r in leaders],
            indent=2,
        )
    )
    meta = {
        "warmup_epochs": cfg["search_warmup_epochs"],
        "rounds": round_idx + 1,
        "updates": update_idx,
        "converged": converged,
        "teacher_members": manifest["n_members"],
        "config_hash": cfgmod.config_hash(cfg),
    }
    (sdir / "search_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return meta


def _load_search(cfg, spec, layout, sdir) -> tuple[SharedPool, ControllerPolicy, list]:
    if not (sdir / "pool.odtw").exists():
        raise FileNotFoundError(f"no search artifacts under {sdir}; run search first")
    pool = SharedPool(spec, layout, cfgmod.stream(cfg["seed"], "search"))
    pool.load(sdir / "pool.odtw")
    policy = ControllerPolicy(
        layout,
        spec.backbone_id,
        cfgmod.stream(cfg["seed"], "controller"),
        hidden=cfg["controller_hidden"],
    )
    policy.load(sdir / "controller.odtw")
    leaders = json.loads((sdir / "leaderboard.json").read_text())
    extra = [ArchitectureGenome.from_json(json.dumps(e["genome"])) for e in leaders]
    return pool, policy, extra


# ---------------------------------------------------------------------------
# select-retrain


def cmd_select_retrain(
    cfg: dict,
    out=None,
    data_dir=None,
    teacher_dir=None,
    search_dir=None,
    final_dir=None,
    log=None,
) -> dict:
    bundle = _load_bundle(cfg, out, data_dir)
    tdir = Path(teacher_dir) if teacher_dir is not None else resolve_out(cfg, out) / "teacher"
    logits = ensmod.load_logits(tdir)
    spec = cfgmod.backbone_from_config(cfg)
    layout = SlotLayout.even(cfg["slots"], len(spec.stages))
    sdir = Path(search_dir) if search_dir is not None else resolve_out(cfg, out) / "search"
    pool, policy, leaders = _load_search(cfg, spec, layout, sdir)

    budget = cfgmod.resolve_budget(cfg, spec)
    report = select_best(
        policy,
        spec,
        budget,
        cfg["n_candidates"],
        cfgmod.stream(cfg["seed"], "select"),
        full_val_reward(pool, bundle),
        extra_genomes=leaders,
    )
    fdir = Path(final_dir) if final_dir is not None else resolve_out(cfg, out) / "final"
    fdir.mkdir(parents=True, exist_ok=True)
    (fdir / "selection.json").write_text(report.to_json())
    winner = report.winner
    _say(log, f"winner {winner.to_json()} ({genome_param_count(winner, spec)} params, budget {budget})")

    distill = _distill(cfg)
    schedule = cfgmod.student_schedule(cfg)
    metrics_rows = []
    per_seed = []
    for s in cfg["seeds"]:
        rng = cfgmod.stream(cfg["seed"], "retrain", s)
        net, result = retrain(
            winner,
            spec,
            bundle,
            schedule,
            rng,
            loss_kind=cfg["train_loss"],
            distill=distill,
            member_logits=logits["train"],
            log=log,
        )
        save_tensors(fdir / f"final_seed{s}.odtw", net.state_dict())
        for row in result.history:
            last = row["epoch"] == schedule.epochs - 1
            metrics_rows.append(
                (
                    s,
                    row["epoch"],
                    f"{row['train_loss']:.6f}",
                    f"{row['train_acc']:.6f}",
                    f"{row['val_acc']:.6f}",
                    f"{result.test_acc:.6f}" if last else "",
                )
            )
        per_seed.append(
            {
                "seed": s,
                "test_acc": result.test_acc,
                "val_acc": result.val_acc,
                "train_acc": result.train_acc,
                "params": genome_param_count(winner, spec),
            }
        )
        _say(log, f"seed {s}: test acc {result.test_acc:.3f}")
    _write_csv(
        fdir / "metrics.csv",
        ("seed", "epoch", "train_loss", "train_acc", "val_acc", "test_acc"),
        metrics_rows,
    )
    rec = cfgmod.RunRecord(cfgmod.config_hash(cfg), cfgmod.code_hash(), per_seed)
    (fdir / "run_record.json").write_text(rec.to_json())
    return json.loads(rec.to_json())


# ---------------------------------------------------------------------------
# ablation


def _train_plain(cfg, bundle, spec, loss_kind, logits_train, row_key, log) -> list[float]:
    distill = _distill(cfg)
    schedule = cfgmod.student_schedule(cfg)
    accs = []
    for s in cfg["seeds"]:
        rng = cfgmod.stream(cfg["seed"], "retrain", row_key, s)
        net = build_network(spec, rng)
        res = train_model(
            net,
            bundle,
            schedule,
            rng,
            loss_kind=loss_kind,
            distill=distill,
            member_logits=logits_train if loss_kind != "ce" else None,
        )
        accs.append(res.test_acc)
        _say(log, f"  {spec.backbone_id} {loss_kind} seed {s}: {res.test_acc:.3f}")
    return accs


def cmd_ablation(cfg: dict, out=None, log=None) -> list[dict]:
    """Loss-combination grid: the plain student under each loss, two
    man-made enlarged backbones under each loss, and the searched model for
    every (search loss, train loss) pair."""
    base = resolve_out(cfg, out)
    bundle = _load_bundle(cfg, base)
    tdir = base / "teacher"
    logits = ensmod.load_logits(tdir)
    spec = cfgmod.backbone_from_config(cfg)
    adir = base / "ablation"
    adir.mkdir(parents=True, exist_ok=True)
    kinds = ("ce", "kd", "od")
    rows = []

    def add_row(model, l_s, l_t, accs, params):
        arr = np.array(accs)
        rows.append(
            {
                "model": model,
                "l_s": l_s,
                "l_t": l_t,
                "acc_mean": float(arr.mean()),
                "acc_std": float(arr.std()),
                "params": int(params),
            }
        )

    _say(log, "ablation: student rows")
    for i, lt in enumerate(kinds):
        accs = _train_plain(cfg, bundle, spec, lt, logits["train"], i, log)
        add_row("student", "-", lt, accs, backbone_param_count(spec))

    _say(log, "ablation: man-made rows")
    for j, bigger in enumerate((deepen(spec, 2), widen(spec, 2))):
        for i, lt in enumerate(kinds):
            accs = _train_plain(cfg, bundle, bigger, lt, logits["train"], 100 + 10 * j + i, log)
            add_row(bigger.backbone_id, "-", lt, accs, backbone_param_count(bigger))

    _say(log, "ablation: searched rows")
    layout = SlotLayout.even(cfg["slots"], len(spec.stages))
    budget = cfgmod.resolve_budget(cfg, spec)
    distill = _distill(cfg)
    schedule = cfgmod.student_schedule(cfg)
    for ls in kinds:
        cell_cfg = dict(cfg, search_loss=ls)
        sdir = adir / f"search_{ls}"
        cmd_search(cell_cfg, base, teacher_dir=tdir, search_dir=sdir, log=log)
        pool, policy, leaders = _load_search(cell_cfg, spec, layout, sdir)
        report = select_best(
            policy,
            spec,
            budget,
            cfg["n_candidates"],
            cfgmod.stream(cfg["seed"], "select", kinds.index(ls)),
            full_val_reward(pool, bundle),
            extra_genomes=leaders,
        )
        (sdir / "selection.json").write_text(report.to_json())
        for lt in kinds:
            accs = []
            for s in cfg["seeds"]:
                rng = cfgmod.stream(
                    cfg["seed"], "retrain", 1000 + kinds.index(ls) * 10 + kinds.index(lt), s
                )
                _, res = retrain(
                    report.winner,
                    spec,
                    bundle,
                    schedule,
                    rng,
                    loss_kind=lt,
                    distill=distill,
                    member_logits=logits["train"],
                )
                accs.append(res.test_acc)
            add_row("searched", ls, lt, accs, genome_param_count(report.winner, spec))
            _say(log, f"  searched L_S={ls} L_T={lt}: {np.mean(accs):.3f}")

    _write_csv(
        adir / "ablation.csv",
        ("model", "l_s", "l_t", "acc_mean", "acc_std", "params"),
        [
            (r["model"], r["l_s"], r["l_t"], repr(r["acc_mean"]), repr(r["acc_std"]), r["params"])
            for r in rows
        ],
    )
    return rows


def read_ablation_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return [
            {
                "model": row["model"],
                "l_s": row["l_s"],
                "l_t": row["l_t"],
                "acc_mean": float(row["acc_mean"]),
                "acc_std": float(row["acc_std"]),
                "params": int(row["params"]),
            }
            for row in csv.DictReader(f)
        ]


# ---------------------------------------------------------------------------
# gradcheck


def _broken_scale(t: Tensor) -> Tensor:
    """Negative-control fixture: identity forward, deliberately wrong adjoint."""
    out = Tensor(t.data.copy())
    return record("broken_scale", (t,), out, lambda g: (1.5 * g,))


def _gradcheck_cases(rng: np.random.Generator):
    """(name, scalar_fn, point) triples covering every differentiable op and
    loss. Points avoid relu/maxpool nondifferentiable sets."""

    def away(x, margin=0.1):
        return x + margin * np.sign(x)

    def proj(op_fn, point):
        v = rng.normal(size=op_fn(point).data.shape)
        return lambda t: ops.dot_const(op_fn(t), v)

    cases = []

    def case(name, op_fn, arr):
        point = Tensor(np.asarray(arr, dtype=np.float64))
        cases.append((name, proj(op_fn, point), point))

    x_img = rng.normal(size=(2, 3, 6, 6))
    w_c = rng.normal(size=(4, 3, 3, 3)) * 0.5
    b_c = rng.normal(size=4)
    y_same = rng.normal(size=(2, 3, 6, 6))

    case("add/x", lambda t: ops.add(t, Tensor(y_same)), x_img)
    case("mul/x", lambda t: ops.mul(t, Tensor(y_same)), x_img)
    case("affine/x", lambda t: ops.affine(t, -1.7, 0.3), x_img)
    case("relu/x", lambda t: ops.relu(t), away(rng.normal(size=(3, 7))))
    case("sigmoid/x", lambda t: ops.sigmoid(t), rng.normal(size=(3, 7)))
    case("tanh/x", lambda t: ops.tanh(t), rng.normal(size=(3, 7)))
    case("softmax/x", lambda t: ops.softmax(t), rng.normal(size=(4, 6)))
    case("log_softmax/x", lambda t: ops.log_softmax(t), rng.normal(size=(4, 6)))

    xd = rng.normal(size=(3, 5))
    wd = rng.normal(size=(5, 4))
    bd = rng.normal(size=4)
    case("dense/x", lambda t: ops.dense(t, Tensor(wd), Tensor(bd)), xd)
    case("dense/w", lambda t: ops.dense(Tensor(xd), t, Tensor(bd)), wd)
    case("dense/b", lambda t: ops.dense(Tensor(xd), Tensor(wd), t), bd)

    case("conv2d/x", lambda t: ops.conv2d(t, Tensor(w_c), Tensor(b_c)), x_img)
    case("conv2d/w", lambda t: ops.conv2d(Tensor(x_img), t, Tensor(b_c)), w_c)
    case("conv2d/b", lambda t: ops.conv2d(Tensor(x_img), Tensor(w_c), t), b_c)
    case("conv2d_s2/x", lambda t: ops.conv2d(t, Tensor(w_c), None, stride=2), x_img)
    case("conv2d_s2/w", lambda t: ops.conv2d(Tensor(x_img), t, None, stride=2), w_c)

    w_dw = rng.normal(size=(3, 3, 3)) * 0.5
    w_pw = rng.normal(size=(5, 3, 1, 1)) * 0.5
    b_pw = rng.normal(size=5)
    case("depthwise/x", lambda t: ops.depthwise_conv2d(t, Tensor(w_dw)), x_img)
    case("depthwise/w", lambda t: ops.depthwise_conv2d(Tensor(x_img), t), w_dw)
    case("sepconv/x", lambda t: ops.sepconv2d(t, Tensor(w_dw), Tensor(w_pw), Tensor(b_pw)), x_img)
    case("sepconv/dw", lambda t: ops.sepconv2d(Tensor(x_img), t, Tensor(w_pw), Tensor(b_pw)), w_dw)
    case("sepconv/pw", lambda t: ops.sepconv2d(Tensor(x_img), Tensor(w_dw), t, Tensor(b_pw)), w_pw)
    case("sepconv/b", lambda t: ops.sepconv2d(Tensor(x_img), Tensor(w_dw), Tensor(w_pw), t), b_pw)

    case("max_pool/x", lambda t: ops.max_pool2d(t, 3), rng.normal(size=(2, 2, 5, 5)))
    case("avg_pool/x", lambda t: ops.avg_pool2d(t, 3), x_img)
    case("global_avg_pool/x", lambda t: ops.global_avg_pool(t), x_img)
    case("subsample_pad/x", lambda t: ops.subsample_pad_channels(t, 5, 2), x_img)

    gamma = 1.0 + 0.3 * rng.normal(size=3)
    beta = rng.normal(size=3)
    stats = ops.BnStats(3)
    stats.mean = rng.normal(size=3)
    stats.var = 1.0 + 0.5 * rng.random(3)

    def bn(mode, t, g, bta):
        return ops.batch_norm(t, g, bta, stats.copy(), mode=mode)

    case("batch_norm_train/x", lambda t: bn("train", t, Tensor(gamma), Tensor(beta)), x_img)
    case("batch_norm_train/gamma", lambda t: bn("train", Tensor(x_img), t, Tensor(beta)), gamma)
    case("batch_norm_train/beta", lambda t: bn("train", Tensor(x_img), Tensor(gamma), t), beta)
    case("batch_norm_eval/x", lambda t: bn("eval", t, Tensor(gamma), Tensor(beta)), x_img)

    table = rng.normal(size=(6, 4))
    case("embed/table", lambda t: ops.embed(t, 2), table)
    cases.append(
        (
            "select_scalar/x",
            lambda t: ops.select_scalar(t, 1, 2),
            Tensor(rng.normal(size=(3, 4))),
        )
    )
    case("sum_all/x", lambda t: ops.sum_all(t), rng.normal(size=(3, 4)))
    case("mean_all/x", lambda t: ops.mean_all(t), rng.normal(size=(3, 4)))

    # losses: student logits are the checked variable, teachers constant
    b_sz, n_cls, n_mem = 5, 4, 3
    labels = rng.integers(0, n_cls, b_sz)
    student = rng.normal(size=(b_sz, n_cls))
    teacher = rng.normal(size=(b_sz, n_cls))
    members = rng.normal(size=(n_mem, b_sz, n_cls))
    # force a mixed oracle mask: row 0 covered, last row uncovered
    members[0, 0] = -1.0
    members[0, 0, labels[0]] = 3.0
    members[:, -1] = -1.0
    members[:, -1, (labels[-1] + 1) % n_cls] = 3.0

    cases.append(("loss_ce", lambda t: losses.cross_entropy(t, labels), Tensor(student)))
    for temp in (1.0, 3.0):
        cases.append(
            (
                f"loss_kl_T{temp:g}",
                lambda t, temp=temp: losses.kl_distill(t, teacher, temp),
                Tensor(student),
            )
        )
    for lam in (0.0, 0.5, 1.0):
        dc = losses.DistillConfig(temperature=3.0, balance=lam)
        cases.append(
            (
                f"loss_kd_lam{lam:g}",
                lambda t, dc=dc: losses.kd_loss(t, teacher, labels, dc),
                Tensor(student),
            )
        )
    dc = losses.DistillConfig(temperature=3.0, balance=0.3)
    cases.append(
        ("loss_od_mixed", lambda t: losses.od_loss(t, members, labels, dc), Tensor(student))
    )
    dc0 = losses.DistillConfig(temperature=3.0, balance=0.0)
    cases.append(
        ("loss_od_lam0", lambda t: losses.od_loss(t, members, labels, dc0), Tensor(student))
    )
    return cases


def cmd_gradcheck(threshold: float = 1e-4, corrupt: str | None = None, log=None):
    """Finite-difference sweep; returns (per-case rows, all_passed).

    `corrupt` wires a deliberately wrong adjoint into the named case so the
    suite's failure path stays tested.
    """
    rng = np.random.default_rng(20240817)
    t0 = time.time()
    rows = []
    ok = True
    for name, fn, point in _gradcheck_cases(rng):
        checked_fn = fn
        if corrupt is not None and name == corrupt:
            checked_fn = lambda t, fn=fn: _broken_scale(fn(t))
        err = grad_check(checked_fn, point)
        passed = err < threshold
        ok = ok and passed
        rows.append({"case": name, "max_rel_err": err, "pass": passed})
        _say(log, f"{'PASS' if passed else 'FAIL'} {name:28s} max rel err {err:.3e}")
    _say(log, f"gradcheck: {len(rows)} cases in {time.time() - t0:.1f}s, all_pass={ok}")
    return rows, ok
