"""Run drivers: training, evaluation, clue-map dumping, config sweeps.

The op modules own the math; this file owns sequencing, bookkeeping and the
on-disk layout of a run directory. Every random draw goes through a seed
derived from the run seed plus a purpose tag, so two runs of the same config
against the same cache produce byte-identical checkpoints and tables.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data, heads, losses, metrics, part_discovery, pixel_discovery
from .affinity import PromptEmbedding, ego_object_affinity, exo_object_affinity
from .config import RunConfig
from .errors import AffgroundError, InputError, NumericError
from .seeding import derived_rng


# --------------------------------------------------------------------------
# instance preparation (everything derivable from frozen features)


@dataclass
class PreparedInstance:
    record: data.InstanceRecord
    label: int
    ego_feats: np.ndarray
    exo_feats: list[np.ndarray]
    aff_ego: object
    aff_exo: list
    ref: object


def prompt_table(cache: data.FeatureCache,
                 classes: list[str]) -> dict[str, PromptEmbedding]:
    """One prompt embedding pair per action class, read from the cache."""
    table = {}
    for action in classes:
        table[action] = PromptEmbedding.build(
            action,
            cache.read64(f"text/{action}/action"),
            cache.read64(f"text/{action}/entity"),
        )
    return table


def prepare_instance(cache: data.FeatureCache, record: data.InstanceRecord,
                     label_map: dict[str, int],
                     prompts: dict[str, PromptEmbedding],
                     cfg: RunConfig) -> PreparedInstance:
    """Load one record and precompute its affinity maps and clue reference.

    All of this depends only on frozen backbone features, so it is done once
    per record rather than once per step.
    """
    if record.action not in label_map:
        raise InputError(
            f"action '{record.action}' of {record.instance_id} is not in the "
            f"class list")
    ego_dino, ego_clip, attn, exo_dino, exo_clip = data.load_instance(cache, record)
    prompt = prompts[record.action]
    aff_ego = ego_object_affinity(ego_clip, prompt, instance_id=record.instance_id)
    aff_exo = [
        exo_object_affinity(ec, prompt, k=cfg.pool_window,
                            entity_prenorm=cfg.entity_prenorm,
                            instance_id=record.instance_id)
        for ec in exo_clip
    ]
    ref = part_discovery.build_reference(
        cfg.reference_source, attn, aff_ego, cfg.ref_binarize_thresh)
    return PreparedInstance(record=record, label=label_map[record.action],
                            ego_feats=ego_dino, exo_feats=exo_dino,
                            aff_ego=aff_ego, aff_exo=aff_exo, ref=ref)


def _prepare_all(cache, records, label_map, prompts, cfg):
    return [prepare_instance(cache, r, label_map, prompts, cfg) for r in records]


# --------------------------------------------------------------------------
# training


@dataclass
class EpochLog:
    epoch: int
    steps: int
    ce: float
    proto: float
    pix: float
    total: float
    n_reliable: int
    n_part_level: int
    n_pixel_skip: int
    n_proto_dropped: int
    val: dict | None = None


@dataclass
class TrainResult:
    params: heads.HeadParams
    opt: heads.OptState
    classes: list[str]
    logs: list[EpochLog]
    checkpoint_path: str | None
    steps_run: int


def _train_step(batch: list[PreparedInstance], params: heads.HeadParams,
                cfg: RunConfig) -> tuple[losses.LossReport, dict]:
    """One optimizer step over a batch of instances.

    Returns the loss report and the summed parameter gradients. Clue
    discovery and the pixel partition run inside the step because the
    interaction masks depend on the current CAMs.
    """
    n_batch = len(batch)
    outs_ego = []
    outs_exo = []
    for inst in batch:
        outs_ego.append(heads.forward(inst.ego_feats, inst.label, params))
        outs_exo.append([heads.forward(f, inst.label, params)
                         for f in inst.exo_feats])

    counts = {"reliable": 0, "part_level": 0, "pixel_skip": 0,
              "proto_dropped": 0}

    # prototype term
    packs: list[losses.PrototypePack | None] = [None] * n_batch
    proto_feat_grads: dict = {}
    proto_value = 0.0
    proto_scale = 0.0
    if cfg.proto_weight != 0.0:
        for b, inst in enumerate(batch):
            selection = part_discovery.discover_part(
                cam_exo=[o.cam_target for o in outs_exo[b]],
                aff_exo=inst.aff_exo,
                feats_exo=inst.exo_feats,
                feats_ego=inst.ego_feats,
                ref=inst.ref,
                alpha=cfg.part_iou_thresh,
                gamma1=cfg.exo_fg_thresh,
                k=cfg.num_clusters,
                seed=cfg.seed,
                instance_id=inst.record.instance_id,
                combine=cfg.cam_combine,
            )
            if selection.reliable:
                counts["reliable"] += 1
            packs[b] = losses.build_pack(
                outs_ego[b].proto_feats,
                [o.proto_feats for o in outs_exo[b]],
                inst.aff_ego, inst.aff_exo, selection,
                outs_ego[b].cam_target,
                [o.cam_target for o in outs_exo[b]],
                inst.label, beta=cfg.proto_bias, index=b,
                by_mass=cfg.pool_by_mask_mass,
            )
            if packs[b] is None:
                counts["proto_dropped"] += 1
        proto_mean, proto_feat_grads, n_contrib = losses.proto_loss_and_grads(
            packs, cfg.temperature)
        proto_scale = float(n_contrib) if cfg.proto_batch_reduction == "sum" else 1.0
        proto_value = proto_mean * proto_scale

    # pixel term
    pix_grads: list[np.ndarray | None] = [None] * n_batch
    pix_losses: list[float] = []
    if cfg.pixel_weight != 0.0:
        for b, inst in enumerate(batch):
            rho = pixel_discovery.compute_rho(inst.aff_exo)
            sets = pixel_discovery.build_pixel_sets(
                inst.aff_ego, rho, cfg.ego_fg_thresh)
            if sets.skip:
                counts["pixel_skip"] += 1
                continue
            if sets.mode == pixel_discovery.PART_LEVEL:
                counts["part_level"] += 1
            if cfg.pixel_cap > 0:
                sets = pixel_discovery.subsample_sets(
                    sets, cfg.pixel_cap,
                    derived_rng(cfg.seed, "pixcap", inst.record.instance_id))
            loss_b, dpix = losses.pixel_loss_and_grad(
                outs_ego[b].pixel_feats, sets, cfg.temperature)
            pix_losses.append(loss_b)
            pix_grads[b] = dpix
    n_pix = len(pix_losses)
    pix_value = float(sum(pix_losses) / n_pix) if n_pix else 0.0

    # classification term and backward pass
    grads = heads.zero_grads(params)
    ce_total = 0.0
    for b, inst in enumerate(batch):
        ce_b, ce_view_grads = losses.classification_loss_and_grads(
            outs_ego[b].logits, [o.logits for o in outs_exo[b]], inst.label)
        ce_total += ce_b / n_batch

        d_proto = proto_feat_grads.get((b, "ego"))
        if d_proto is not None:
            d_proto = cfg.proto_weight * proto_scale * d_proto
        d_pixel = None
        if pix_grads[b] is not None:
            d_pixel = (cfg.pixel_weight / n_pix) * pix_grads[b]
        heads.accumulate_grads(grads, heads.backward(
            outs_ego[b], params, d_proto, d_pixel, ce_view_grads[0] / n_batch))
        for e, out in enumerate(outs_exo[b]):
            d_proto = proto_feat_grads.get((b, f"exo{e}"))
            if d_proto is not None:
                d_proto = cfg.proto_weight * proto_scale * d_proto
            heads.accumulate_grads(grads, heads.backward(
                out, params, d_proto, None, ce_view_grads[1 + e] / n_batch))

    report = losses.total_loss(ce_total, proto_value, pix_value,
                               cfg.proto_weight, cfg.pixel_weight, counts)
    return report, grads


def _dump_failure(out_dir: str, epoch: int, step: int,
                  report: losses.LossReport) -> None:
    if not out_dir:
        return
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    payload = {"epoch": epoch, "step": step, "ce": report.ce,
               "proto": report.proto, "pix": report.pix,
               "total": report.total, "counts": report.counts}
    (path / "failure_state.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _plain(obj):
    """json-safe copy: numpy scalars to python, dicts/lists recursed."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def train(cfg: RunConfig, cache: data.FeatureCache | None = None,
          records: list[data.InstanceRecord] | None = None,
          log_fn=None) -> TrainResult:
    """Full training run. Returns the trained heads plus the epoch logs.

    When cfg.out_dir is set, also writes the effective config, the epoch log
    stream, and a final checkpoint under it.
    """
    cfg.validate()
    if cache is None:
        if not cfg.cache_dir:
            raise InputError("no feature cache: set cache_dir")
        cache = data.FeatureCache(cfg.cache_dir)
    if records is None:
        rec_path = cfg.records_path or str(Path(cache.path) / "records.json")
        records = data.load_records(rec_path)
    train_records = [r for r in records if r.split == "train"]
    if not train_records:
        raise InputError("no training instances in the record set")
    classes = data.class_list(records, cache)
    label_map = {a: i for i, a in enumerate(classes)}
    prompts = prompt_table(cache, classes)
    insts = _prepare_all(cache, train_records, label_map, prompts, cfg)

    d = insts[0].ego_feats.shape[2]
    params = heads.init_params(cfg.seed, d, cfg.proj_dim, len(classes),
                               trunk_hidden=cfg.trunk_hidden or None)
    opt = heads.OptState.fresh(params)

    out_dir = cfg.out_dir
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        cfg.to_file(Path(out_dir) / "config.json")

    order_rng = derived_rng(cfg.seed, "order")
    logs: list[EpochLog] = []
    step_no = 0
    capped = False
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(insts))
        sums = {"ce": 0.0, "proto": 0.0, "pix": 0.0, "total": 0.0}
        counts = {"reliable": 0, "part_level": 0, "pixel_skip": 0,
                  "proto_dropped": 0}
        epoch_steps = 0
        for start in range(0, len(order), cfg.batch_size):
            if cfg.max_steps and step_no >= cfg.max_steps:
                capped = True
                break
            batch = [insts[i] for i in order[start:start + cfg.batch_size]]
            report, grads = _train_step(batch, params, cfg)
            if not np.isfinite(report.total):
                _dump_failure(out_dir, epoch, step_no, report)
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {step_no}: "
                    f"ce={report.ce} proto={report.proto} pix={report.pix}")
            heads.sgd_step(params, grads, cfg.lr, cfg.weight_decay,
                           cfg.momentum, opt)
            step_no += 1
            epoch_steps += 1
            for k in sums:
                sums[k] += getattr(report, k)
            for k in counts:
                counts[k] += report.counts.get(k, 0)
        if epoch_steps == 0:
            break
        val = None
        if cfg.val_slice > 0:
            val_records = [r for r in records if r.split == "test"][:cfg.val_slice]
            if val_records:
                res = evaluate(params, classes, cache, val_records, cfg)
                val = dict(res.means)
        log = EpochLog(
            epoch=epoch, steps=epoch_steps,
            ce=sums["ce"] / epoch_steps, proto=sums["proto"] / epoch_steps,
            pix=sums["pix"] / epoch_steps, total=sums["total"] / epoch_steps,
            n_reliable=counts["reliable"], n_part_level=counts["part_level"],
            n_pixel_skip=counts["pixel_skip"],
            n_proto_dropped=counts["proto_dropped"], val=val)
        logs.append(log)
        if log_fn is not None:
            log_fn(log)
        if capped:
            break

    checkpoint_path = None
    if out_dir:
        checkpoint_path = str(Path(out_dir) / "checkpoint")
        meta = {
            "config": cfg.to_dict(),
            "config_hash": cfg.hash(),
            "cache_hash": cache.hash,
            "classes": classes,
            "steps_run": step_no,
            "rng_state": _plain(order_rng.bit_generator.state),
        }
        heads.save_checkpoint(checkpoint_path, params, opt, meta)
        log_path = Path(out_dir) / "train_log.json"
        log_path.write_text(json.dumps(
            [_plain(asdict(l)) for l in logs], sort_keys=True, indent=2) + "\n")
    return TrainResult(params=params, opt=opt, classes=classes, logs=logs,
                       checkpoint_path=checkpoint_path, steps_run=step_no)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    rows: list[dict]
    means: dict[str, float]
    skipped: int


def evaluate(params: heads.HeadParams, classes: list[str],
             cache: data.FeatureCache, records: list[data.InstanceRecord],
             cfg: RunConfig) -> EvalResult:
    """Score each record's predicted heatmap against its ground truth.

    Records without ground truth are skipped and counted. Prediction uses
    only the egocentric view: CAM for the record's action, optionally
    calibrated by the binarized object affinity.
    """
    label_map = {a: i for i, a in enumerate(classes)}
    prompts = prompt_table(cache, classes)
    rows: list[dict] = []
    skipped = 0
    for record in records:
        if record.gt_ref is None:
            skipped += 1
            continue
        inst = prepare_instance(cache, record, label_map, prompts, cfg)
        out = heads.forward(inst.ego_feats, inst.label, params)
        pred = out.cam_target
        if cfg.calibrate:
            pred = metrics.calibrate(pred, inst.aff_ego, cfg.ego_fg_thresh)
        gt = data.load_gt(record.gt_ref, cache)
        kld_v, sim_v, nss_v = metrics.evaluate_instance(
            pred, gt, kld_eps=cfg.kld_eps,
            fixation_thresh=cfg.nss_fixation_thresh)
        rows.append({"instance_id": record.instance_id,
                     "action": record.action,
                     "kld": kld_v, "sim": sim_v, "nss": nss_v})
    if not rows:
        raise InputError("no instance had ground truth to evaluate against")
    means = {m: float(np.mean([r[m] for r in rows])) for m in ("kld", "sim", "nss")}
    return EvalResult(rows=rows, means=means, skipped=skipped)


def evaluate_checkpoint(checkpoint_path: str, cfg: RunConfig,
                        cache: data.FeatureCache | None = None,
                        records: list[data.InstanceRecord] | None = None) -> EvalResult:
    """Convenience wrapper: load a checkpoint, score the test split."""
    cfg.validate()
    params, _, meta = heads.load_checkpoint(checkpoint_path)
    classes = list(meta.get("classes", []))
    if not classes:
        raise InputError(f"checkpoint at {checkpoint_path} carries no class list")
    if cache is None:
        if not cfg.cache_dir:
            raise InputError("no feature cache: set cache_dir")
        cache = data.FeatureCache(cfg.cache_dir)
    if records is None:
        rec_path = cfg.records_path or str(Path(cache.path) / "records.json")
        records = data.load_records(rec_path)
    test_records = [r for r in records if r.split == "test"]
    if not test_records:
        raise InputError("no test instances in the record set")
    return evaluate(params, classes, cache, test_records, cfg)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def write_table(path: str | Path, header: list[str], rows: list[dict]) -> None:
    """Tab-separated table with a fixed column order and float format, so
    identical runs write identical bytes."""
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(_fmt(row.get(h, "")) for h in header))
    Path(path).write_text("\n".join(lines) + "\n")


def write_eval_outputs(out_dir: str | Path, result: EvalResult) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "metrics.tsv",
                ["instance_id", "action", "kld", "sim", "nss"], result.rows)
    summary = {"means": result.means, "n_instances": len(result.rows),
               "n_skipped": result.skipped}
    (out / "summary.json").write_text(
        json.dumps(_plain(summary), sort_keys=True, indent=2) + "\n")


# --------------------------------------------------------------------------
# clue discovery dumps


@dataclass
class DiscoverRow:
    instance_id: str
    reliable: bool
    mode: str
    rho: float
    piou_scores: list[float] = field(default_factory=list)
    selection: object = None
    sets: object = None


def discover(cfg: RunConfig, params: heads.HeadParams | None = None,
             cache: data.FeatureCache | None = None,
             records: list[data.InstanceRecord] | None = None,
             out_dir: str | None = None) -> list[DiscoverRow]:
    """Run clue discovery over records with exocentric partners and report
    per-instance verdicts.

    Without trained heads the interaction mask falls back to the affinity
    alone (a uniform CAM), which is the state discovery starts from anyway.
    When out_dir is set, the affinity maps, part maps and positive-pixel
    masks are dumped as grayscale images, one directory per instance;
    unreliable instances get a marker file instead of part maps.
    """
    cfg.validate()
    if cache is None:
        if not cfg.cache_dir:
            raise InputError("no feature cache: set cache_dir")
        cache = data.FeatureCache(cfg.cache_dir)
    if records is None:
        rec_path = cfg.records_path or str(Path(cache.path) / "records.json")
        records = data.load_records(rec_path)
    usable = [r for r in records if r.exo_refs]
    if not usable:
        raise InputError("no record has exocentric partners to discover from")
    classes = data.class_list(records, cache)
    label_map = {a: i for i, a in enumerate(classes)}
    prompts = prompt_table(cache, classes)

    rows: list[DiscoverRow] = []
    for record in usable:
        inst = prepare_instance(cache, record, label_map, prompts, cfg)
        h, w = inst.ego_feats.shape[:2]
        if params is not None:
            cam_exo = [heads.forward(f, inst.label, params).cam_target
                       for f in inst.exo_feats]
        else:
            cam_exo = [np.ones((h, w)) for _ in inst.exo_feats]
        selection = part_discovery.discover_part(
            cam_exo=cam_exo, aff_exo=inst.aff_exo, feats_exo=inst.exo_feats,
            feats_ego=inst.ego_feats, ref=inst.ref,
            alpha=cfg.part_iou_thresh, gamma1=cfg.exo_fg_thresh,
            k=cfg.num_clusters, seed=cfg.seed,
            instance_id=record.instance_id, combine=cfg.cam_combine)
        rho = pixel_discovery.compute_rho(inst.aff_exo)
        sets = pixel_discovery.build_pixel_sets(inst.aff_ego, rho,
                                                cfg.ego_fg_thresh)
        rows.append(DiscoverRow(
            instance_id=record.instance_id, reliable=selection.reliable,
            mode=sets.mode, rho=rho,
            piou_scores=[float(s) for s in selection.piou_scores],
            selection=selection, sets=sets))
        if out_dir:
            inst_dir = Path(out_dir) / record.instance_id
            inst_dir.mkdir(parents=True, exist_ok=True)
            data.save_grayscale(inst_dir / "aff_ego.png", inst.aff_ego.map)
            for e, a in enumerate(inst.aff_exo):
                data.save_grayscale(inst_dir / f"aff_exo{e}.png", a.map)
            data.save_grayscale(inst_dir / "qpos.png",
                                sets.positives.astype(np.float64))
            if selection.reliable:
                data.save_grayscale(inst_dir / "part_ego.png",
                                    selection.part_map_ego)
                for e, m in enumerate(selection.part_map_exo):
                    data.save_grayscale(inst_dir / f"part_exo{e}.png", m)
            else:
                (inst_dir / "unreliable.marker").write_text("")

    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summary = {
            "n_instances": len(rows),
            "n_reliable": sum(1 for r in rows if r.reliable),
            "n_part_level": sum(1 for r in rows
                                if r.mode == pixel_discovery.PART_LEVEL),
            "n_skipped_no_exo": len(records) - len(usable),
        }
        (out / "discover_summary.json").write_text(
            json.dumps(summary, sort_keys=True, indent=2) + "\n")
        write_table(out / "discover.tsv",
                    ["instance_id", "reliable", "mode", "rho"],
                    [{"instance_id": r.instance_id, "reliable": r.reliable,
                      "mode": r.mode, "rho": r.rho} for r in rows])
    return rows


# --------------------------------------------------------------------------
# ablation sweeps


def _grid_points(grid: dict[str, list]) -> list[dict]:
    """Cartesian product of the grid, keys sorted, values in given order."""
    points = [{}]
    for key in sorted(grid):
        points = [dict(p, **{key: v}) for p in points for v in grid[key]]
    return points


def ablate(cfg: RunConfig, grid: dict[str, list],
           cache: data.FeatureCache | None = None,
           records: list[data.InstanceRecord] | None = None,
           out_dir: str | None = None, log_fn=None) -> list[dict]:
    """Train and evaluate once per grid point; the unmodified config is
    always the first row as the reference. A failing point becomes a row
    with an error column instead of aborting the sweep.
    """
    cfg.validate()
    if not grid:
        raise InputError("empty ablation grid")
    for key in grid:
        if key not in cfg.to_dict():
            raise InputError(f"unknown config field in grid: '{key}'")
    if cache is None:
        if not cfg.cache_dir:
            raise InputError("no feature cache: set cache_dir")
        cache = data.FeatureCache(cfg.cache_dir)
    if records is None:
        rec_path = cfg.records_path or str(Path(cache.path) / "records.json")
        records = data.load_records(rec_path)
    test_records = [r for r in records if r.split == "test"]

    keys = sorted(grid)
    points = [{}] + _grid_points(grid)
    rows: list[dict] = []
    for i, point in enumerate(points):
        sub_out = str(Path(out_dir) / f"point_{i:03d}") if out_dir else ""
        point_cfg = cfg.replace(out_dir=sub_out, **point)
        row = {k: getattr(point_cfg, k) for k in keys}
        row["point"] = "baseline" if not point else "sweep"
        try:
            result = train(point_cfg, cache=cache, records=records, log_fn=log_fn)
            ev = evaluate(result.params, result.classes, cache, test_records,
                          point_cfg)
            row.update(ev.means)
            row["error"] = ""
        except AffgroundError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)

    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = ["point"] + keys + ["kld", "sim", "nss", "error"]
        write_table(out / "ablation.tsv", header, rows)
        (out / "ablation.json").write_text(
            json.dumps(_plain(rows), sort_keys=True, indent=2) + "\n")
    return rows
