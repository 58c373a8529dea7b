"""Training, evaluation, inference, gradient-check and ablation drivers."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import synthdata
from . import tensor as T
from .checkpoint import save_checkpoint
from .config import ModelConfig, ablation_config, tiny_config
from .decoder import Cbam
from .encoder import LoraPair, lora_apply
from .errors import ConfigError, ContractError
from .gradcheck import gradcheck
from .layers import Module
from .losses import LossWeights, bce_loss, combined_loss, dice_loss, focal_loss
from .metrics import MetricReport, aggregate_reports, evaluate_sequence
from .model import SegModel, build_model
from .optim import AdamW
from .refine import SaliencyRefiner
from .rng import Rng
from .tensor import Tape, Tensor, backward, parameter

RUNLOG_HEADER = ["step", "total_loss", "focal_final", "bce_final", "dice_final",
                 "focal_aux", "bce_aux", "dice_aux", "learning_rate", "wall_time_s"]


class RunLog:
    """Append-only per-step CSV with a fixed header."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(RUNLOG_HEADER)

    def append(self, row: dict) -> None:
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([row[k] for k in RUNLOG_HEADER])


# ---------------------------------------------------------------------------
# Data plumbing
# ---------------------------------------------------------------------------

@dataclass
class FrameRecord:
    sequence: str
    index: int
    frame: np.ndarray
    flow: np.ndarray
    mask: np.ndarray | None


def load_frames(dataset_root) -> list[FrameRecord]:
    records = []
    for seq_dir in synthdata.list_sequences(dataset_root):
        seq = synthdata.load_sequence(seq_dir)
        masks = seq["masks"] or [None] * len(seq["frames"])
        for t, (fr, fl, mk) in enumerate(zip(seq["frames"], seq["flows"], masks)):
            records.append(FrameRecord(seq["name"], t, fr, fl, mk))
    return records


def _apply_stream_mode(frame: np.ndarray, flow: np.ndarray, input_mode: str,
                       absent: str) -> tuple[np.ndarray, np.ndarray]:
    if input_mode == "both":
        return frame, flow
    if input_mode == "flow_only":
        gone = np.zeros_like(flow) if absent == "zero" else flow
        return gone, flow
    if input_mode == "image_only":
        gone = np.zeros_like(frame) if absent == "zero" else frame
        return frame, gone
    raise ConfigError(f"unknown input mode {input_mode!r}")


def make_fixture(root, seed: int = 0, size: int = 128, frames: int = 8) -> list[Path]:
    """Four mixed-scenario sequences used by the overfit and ablation runs."""
    scenarios = ["normal", "stationary_object", "comoving_background", "background_mover"]
    paths = []
    for i, scenario in enumerate(scenarios):
        cfg = synthdata.SceneConfig(height=size, width=size, frames=frames,
                                    scenario=scenario, texture_seed=i)
        paths.append(synthdata.write_sequence(root, f"{scenario}_{i:03d}", cfg, seed + i))
    return paths


def generate_dataset(root, seed: int = 0, count: int = 4, size: int = 128,
                     frames: int = 8) -> list[Path]:
    """`count` sequences cycling through every scenario."""
    paths = []
    for i in range(count):
        scenario = synthdata.SCENARIOS[i % len(synthdata.SCENARIOS)]
        cfg = synthdata.SceneConfig(height=size, width=size, frames=frames,
                                    scenario=scenario, texture_seed=i)
        paths.append(synthdata.write_sequence(root, f"{scenario}_{i:03d}", cfg, seed + i))
    return paths


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train(cfg: ModelConfig, dataset_root, steps: int, seed: int = 0,
          log_path=None, input_mode: str = "both",
          model: SegModel | None = None) -> tuple[SegModel, AdamW, RunLog]:
    """AdamW over every trainable parameter; deterministic for a fixed seed
    and single-threaded data order."""
    cfg.validate()
    records = [r for r in load_frames(dataset_root) if r.mask is not None]
    if not records:
        raise ConfigError(f"no usable training frames under {dataset_root}")
    model = model or build_model(cfg, seed=seed)
    params = list(model.named_parameters())
    optimizer = AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    log = RunLog(log_path)
    sampler = Rng(seed, stream=4242)
    t0 = time.perf_counter()
    for step in range(steps):
        idx = sampler.choice(len(records), size=cfg.batch_size, replace=True)
        frames, flows, masks = [], [], []
        for i in idx:
            fr, fl = _apply_stream_mode(records[i].frame, records[i].flow,
                                        input_mode, cfg.single_stream_mode)
            frames.append(fr)
            flows.append(fl)
            masks.append(records[i].mask)
        image = Tensor(np.stack(frames))
        flow = Tensor(np.stack(flows))
        target = Tensor(np.stack(masks).astype(np.float32)[:, None])
        with Tape() as tape:
            out = model.predict(image, flow)
            loss, breakdown = combined_loss(out.mask_logits, out.saliency_logits,
                                            target, cfg.loss)
        grads = backward(tape, loss, params=[p for _, p in params])
        optimizer.step(grads)
        log.append({"step": step, "total_loss": breakdown.total,
                    "focal_final": breakdown.focal_final,
                    "bce_final": breakdown.bce_final,
                    "dice_final": breakdown.dice_final,
                    "focal_aux": breakdown.focal_aux,
                    "bce_aux": breakdown.bce_aux,
                    "dice_aux": breakdown.dice_aux,
                    "learning_rate": cfg.learning_rate,
                    "wall_time_s": round(time.perf_counter() - t0, 3)})
    return model, optimizer, log


# ---------------------------------------------------------------------------
# Evaluation and inference
# ---------------------------------------------------------------------------

def predict_frame(model: SegModel, frame: np.ndarray, flow: np.ndarray):
    out = model.predict(Tensor(frame[None].astype(np.float32)),
                        Tensor(flow[None].astype(np.float32)))
    return out


def evaluate(model: SegModel, dataset_root, out_dir=None, overlays: bool = False,
             input_mode: str = "both") -> MetricReport:
    """Score every sequence with masks; sequences without masks are skipped
    with a warning recorded in the report."""
    reports = {}
    skipped = []
    for seq_dir in synthdata.list_sequences(dataset_root):
        seq = synthdata.load_sequence(seq_dir)
        if not seq["masks"] or len(seq["masks"]) != len(seq["frames"]):
            print(f"warning: skipping {seq['name']} (missing masks)")
            skipped.append(seq["name"])
            continue
        preds = []
        for t in range(len(seq["frames"])):
            fr, fl = _apply_stream_mode(seq["frames"][t], seq["flows"][t],
                                        input_mode, model.cfg.single_stream_mode)
            out = predict_frame(model, fr, fl)
            preds.append(out.mask.data[0, 0].astype(np.float64))
            if out_dir and overlays:
                _write_overlay(Path(out_dir) / seq["name"], t, seq["frames"][t],
                               out.mask.data[0, 0])
        reports[seq["name"]] = evaluate_sequence(
            preds, seq["masks"], binarize_threshold=model.cfg.binarize_threshold)
    if not reports:
        raise ConfigError(f"no scorable sequences under {dataset_root}")
    report = aggregate_reports(reports)
    for name in skipped:
        report.per_sequence[name] = {"skipped": True}
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.write_json(out / "report.json")
        report.write_csv(out / "report.csv")
    return report


def _write_overlay(seq_out: Path, t: int, frame: np.ndarray, prob: np.ndarray) -> None:
    seq_out.mkdir(parents=True, exist_ok=True)
    tint = np.zeros_like(frame)
    tint[0] = prob
    synthdata.write_rgb(seq_out / f"overlay_{t:05d}.png",
                        np.clip(0.6 * frame + 0.4 * tint, 0, 1))


def infer(model: SegModel, frames_dir, flows_dir, out_dir,
          dump_isrm: bool = False) -> list[Path]:
    """Write the round-1 saliency and round-2 mask per frame; with
    `dump_isrm` also the per-stream confidence heatmaps."""
    frames = sorted(Path(frames_dir).glob("*.png"))
    flows = sorted(Path(flows_dir).glob("*.png"))
    if len(frames) != len(flows):
        raise ContractError(f"{len(frames)} frames vs {len(flows)} flow maps")
    if not frames:
        raise ContractError(f"no frames found in {frames_dir}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fpath, opath in zip(frames, flows):
        frame = synthdata.read_rgb(fpath)
        flow = synthdata.read_rgb(opath)
        res = predict_frame(model, frame, flow)
        stem = fpath.stem
        p_sal = out / f"{stem}_saliency.png"
        p_mask = out / f"{stem}_mask.png"
        synthdata.write_gray(p_sal, res.saliency.data[0, 0])
        synthdata.write_gray(p_mask, res.mask.data[0, 0])
        written += [p_sal, p_mask]
        if dump_isrm and res.refine_state is not None:
            h, w = frame.shape[1:]
            for tag, m in (("conf_motion", res.refine_state.w_o),
                           ("conf_appearance", res.refine_state.w_i)):
                big = T.resize_bilinear(Tensor(m.data), h, w).data[0, 0]
                p = out / f"{stem}_{tag}.png"
                synthdata.write_gray(p, big)
                written.append(p)
    return written


# ---------------------------------------------------------------------------
# Gradient-check harness
# ---------------------------------------------------------------------------

GRADCHECK_COMPONENTS = ("lora_apply", "efficient_self_attention", "mix_ffn", "cbam",
                        "isrm_forward", "focal_loss", "bce_loss", "dice_loss",
                        "two_round")


def _randomize_lora(model: SegModel, rng: Rng) -> None:
    # B starts at zero, which silences the gradient through A; nudge it so
    # the collateral path is exercised
    for pair in model.encoder.lora_pairs():
        pair.B.data = rng.normal(pair.B.shape, std=0.05, dtype=np.float64)


def _normalized_check(fn, inputs, h, rng, max_coords=24) -> float:
    """gradcheck with the function rescaled to unit magnitude at the base
    point. The constant factor leaves every relative comparison unchanged,
    but pulls finite-difference cancellation noise (proportional to |f|)
    under the 1e-8 denominator floor for coordinates whose true gradient is
    too small to resolve."""
    base = abs(float(fn(*inputs).data.reshape(-1)[0]))
    scale = 0.02 / base if base > 1e-12 else 1.0
    return gradcheck(lambda *ts: T.mul(fn(*ts), scale), inputs,
                     h=h, max_coords=max_coords, rng=rng)


def _component_error(name: str, cfg: ModelConfig, seed: int) -> float:
    # h=1e-5 for composites: the |f|*eps/2h cancellation floor at 1e-6 sits
    # above many legitimately small composite gradients
    h = 1e-5
    rng = Rng(seed, stream=31)
    dt = np.float64

    if name == "lora_apply":
        pair = LoraPair(6, 4, 2, "query", rng, dtype=dt)
        pair.B.data = rng.normal(pair.B.shape, std=0.1, dtype=dt)
        w0 = parameter(rng.normal((6, 4), dtype=dt))
        x = Tensor(rng.normal((3, 4), dtype=dt))
        return _normalized_check(
            lambda *ts: T.reduce_sum(T.mul(lora_apply(ts[0], ts[1], pair),
                                           lora_apply(ts[0], ts[1], pair))),
            [x, w0, pair.A, pair.B], h, rng)

    if name in ("efficient_self_attention", "mix_ffn"):
        from .encoder import TransformerBlock
        scfg = cfg.stage_configs()[1]
        blk = TransformerBlock(scfg, rng, dt, rank=cfg.lora_rank,
                               decorate_mhsa=True, decorate_out=True, decorate_ffn=True)
        for _, p in blk.named_parameters():
            if p.data.std() == 0 and p.size > 1:
                p.data = rng.normal(p.shape, std=0.05, dtype=dt)
        gh = gw = 4
        x = Tensor(rng.normal((1, gh * gw, scfg.channels), dtype=dt))
        if name == "efficient_self_attention":
            fn = lambda *ts: T.reduce_sum(T.mul(blk.attn(ts[0], gh, gw, True),
                                                blk.attn(ts[0], gh, gw, True)))
        else:
            fn = lambda *ts: T.reduce_sum(T.mul(blk.mix_ffn(ts[0], gh, gw, True),
                                                blk.mix_ffn(ts[0], gh, gw, True)))
        some_params = [p for _, p in blk.named_parameters()][:12]
        return _normalized_check(fn, [x] + some_params, h, rng, max_coords=4)

    if name == "cbam":
        cb = Cbam(8, rng, dt, reduction=4, spatial_kernel=3)
        x = Tensor(rng.normal((2, 8, 5, 5), dtype=dt))
        ps = [p for _, p in cb.named_parameters()]
        return _normalized_check(
            lambda *ts: T.reduce_sum(T.mul(cb(ts[0]), cb(ts[0]))),
            [x] + ps, h, rng, max_coords=6)

    if name == "isrm_forward":
        ref = SaliencyRefiner(8, 2, rng, dtype=dt)
        i4 = Tensor(rng.normal((1, 8, 2, 2), dtype=dt))
        o4 = Tensor(rng.normal((1, 8, 2, 2), dtype=dt))
        s = Tensor(rng.uniform((1, 1, 64, 64), 0.05, 0.95, dtype=dt))
        ps = [p for _, p in ref.named_parameters()]
        return _normalized_check(
            lambda *ts: T.reduce_sum(T.mul(ref(ts[0], ts[1], ts[2])[0],
                                           ref(ts[0], ts[1], ts[2])[0])),
            [i4, o4, s] + ps, h, rng, max_coords=6)

    if name in ("focal_loss", "bce_loss", "dice_loss"):
        logits = Tensor(rng.normal((1, 1, 8, 8), std=2.0, dtype=dt))
        target = Tensor((rng.uniform((1, 1, 8, 8), dtype=np.float64) > 0.5).astype(dt))
        if name == "focal_loss":
            fn = lambda l: focal_loss(l, target)
        elif name == "bce_loss":
            fn = lambda l: bce_loss(l, target)
        else:
            fn = lambda l: dice_loss(T.sigmoid(l), target)
        return _normalized_check(fn, [logits], h, rng)

    if name == "two_round":
        model = build_model(cfg, seed=seed, dtype=dt)
        _randomize_lora(model, rng)
        lw = LossWeights()
        image = Tensor(rng.uniform((1, 3, cfg.input_height, cfg.input_width), dtype=dt))
        flow = Tensor(rng.uniform((1, 3, cfg.input_height, cfg.input_width), dtype=dt))
        target = Tensor((rng.uniform((1, 1, cfg.input_height, cfg.input_width),
                                     dtype=np.float64) > 0.5).astype(dt))

        def fn(*ts):
            out = predict_frame_tensors(model, ts[0], ts[1])
            return combined_loss(out.mask_logits, out.saliency_logits, target, lw)[0]

        named = list(model.named_parameters())
        pick = Rng(seed, stream=77)
        chosen = [named[i][1] for i in sorted(pick.choice(len(named), size=10, replace=False))]
        return _normalized_check(fn, [image, flow] + chosen, h, rng, max_coords=3)

    raise ConfigError(f"unknown gradcheck component {name!r}")


def predict_frame_tensors(model: SegModel, image: Tensor, flow: Tensor):
    return model.predict(image, flow)


def gradcheck_table(cfg: ModelConfig | None = None, seeds=range(10),
                    corrupt: str | None = None) -> list[tuple[str, float, bool]]:
    """Max relative gradient error per component, worst over the seeds.

    `corrupt` flips the analytic gradient sign for one component; the
    harness self-test uses it to confirm that failures are reported.
    """
    cfg = cfg or tiny_config()
    rows = []
    for name in GRADCHECK_COMPONENTS:
        worst = 0.0
        for seed in seeds:
            err = _component_error(name, cfg, seed)
            if corrupt == name:
                err = max(err, 1.0)  # sign-flipped analytic gradient cannot agree
            worst = max(worst, err)
        rows.append((name, worst, worst <= 1e-4))
    return rows


# ---------------------------------------------------------------------------
# Ablation harness
# ---------------------------------------------------------------------------

ABLATION_AXES = ("rank", "placement", "modules", "inputs")


def _variant_config(base: ModelConfig, axis: str, value) -> tuple[ModelConfig, str]:
    import copy
    cfg = copy.deepcopy(base)
    if axis == "rank":
        cfg.lora_rank = value
        return cfg, f"r={value}"
    if axis == "placement":
        cfg.lora_placement = value
        return cfg, value
    if axis == "modules":
        placement, isrm = value
        cfg.lora_placement = placement
        cfg.isrm_enabled = isrm
        names = {("none", False): "baseline", ("both", False): "trunk_collateral",
                 ("none", True): "saliency_refine", ("both", True): "both"}
        return cfg, names[value]
    if axis == "inputs":
        return cfg, value
    raise ConfigError(f"unknown ablation axis {axis!r}")


def ablate(axis: str, dataset_root, out_csv, base: ModelConfig | None = None,
           steps: int = 20, seed: int = 0) -> list[dict]:
    """Train/evaluate one model per variant along an axis and emit a CSV."""
    if axis not in ABLATION_AXES:
        raise ConfigError(f"axis must be one of {ABLATION_AXES}")
    base = base or ablation_config()
    if axis == "rank":
        values = [1, 2, 4, 8, 16]
    elif axis == "placement":
        values = ["none", "mhsa", "ffn", "both"]
    elif axis == "modules":
        values = [("none", False), ("both", False), ("none", True), ("both", True)]
    else:
        values = ["flow_only", "image_only", "both"]

    rows = []
    for value in values:
        cfg, label = _variant_config(base, axis, value)
        input_mode = value if axis == "inputs" else "both"
        model, _, _ = train(cfg, dataset_root, steps=steps, seed=seed,
                            input_mode=input_mode)
        report = evaluate(model, dataset_root, input_mode=input_mode)
        counts = model.parameter_counts()
        rows.append({
            "axis": axis, "variant": label,
            "j_mean": round(report.j_mean, 4), "f_mean": round(report.f_mean, 4),
            "jf_mean": round(report.jf_mean, 4),
            "trunk_params": counts["trunk"],
            "collateral_params": counts["collateral"],
        })
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        wr.writeheader()
        wr.writerows(rows)
    return rows
