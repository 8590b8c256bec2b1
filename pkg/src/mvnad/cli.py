"""``mvnad`` command-line tool.

Exit codes: 0 on success, 1 when validation of inputs or configuration fails,
2 when a command fails while running.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from mvnad import camera, mvnt
from mvnad.config import ConfigError, RunConfig, load_config, read_stamp_file
from mvnad.cprn import CprnModel, UntrainedModelError, fit, infer
from mvnad.cprn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from mvnad.metrics import (MetricError, ViewResult, evaluate_run, parse_report_csv, report_csv,
                           report_table)
from mvnad.photometric import RigError, SolveOptions, load_light_rig, solve_normals
from mvnad.synth import N_VIEWS, generate_dataset, load_view, read_manifest_index, sample_dir

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ValidationError(Exception):
    """Bad input detected before any work is done (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(f"{self.prog}: {message}")


# --- shared helpers -----------------------------------------------------------


def _stamp_lines(cfg: RunConfig, prefix: str = "") -> list[str]:
    return [f"{prefix}{k}={v}" for k, v in cfg.stamp().items()]


def write_run_file(out: Path, cfg: RunConfig) -> None:
    lines = _stamp_lines(cfg) + ["config." + line for line in cfg.canonical_text().splitlines()]
    (out / "run.txt").write_text("\n".join(lines) + "\n")


def _run_config_values(run_dir: Path) -> dict[str, str]:
    kv = read_stamp_file(run_dir / "run.txt")
    return {k[7:]: v for k, v in kv.items() if k.startswith("config.")} | {
        k: v for k, v in kv.items() if not k.startswith("config.")}


def _require_out(args) -> Path:
    if not args.out:
        raise ValidationError("--out is required for this command")
    return Path(args.out)


def _open_dataset(cfg: RunConfig, args):
    root = Path(args.data or cfg.dataset_root or "")
    if not str(root) or not (root / "manifest.txt").is_file():
        raise ValidationError(f"dataset root {str(root) or '<unset>'} has no manifest.txt; "
                              "set dataset.root or pass --data")
    manifest, records, extra = read_manifest_index(root)
    if manifest.to_text() != cfg.dataset.to_text():
        raise ValidationError(f"dataset at {root} was generated with different dataset.* settings "
                              "than the current configuration")
    cats = list(cfg.categories or manifest.categories)
    unknown = [c for c in cats if c not in manifest.categories]
    if unknown:
        raise ValidationError(f"categories {unknown} are not in the dataset at {root}")
    return root, manifest, records, cats


def _view_inputs(model: CprnModel, root: Path, rec, view: int):
    lv = load_view(root, rec, view)
    streams = model.config.input_streams
    rgb = lv.rgb if "rgb" in streams else None
    nv = lv.nv if "nv" in streams else None
    return model.features(rgb, nv), lv


# --- subcommands ----------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> int:
    out = Path(args.out or cfg.dataset_root or "")
    if not str(out):
        raise ValidationError("synth needs --out or dataset.root")
    try:
        cfg.dataset.validate()
    except ValueError as exc:
        raise ValidationError(f"dataset config: {exc}") from None
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise ValidationError(f"output directory {out} exists and is not empty")
    records = generate_dataset(cfg.dataset, out, extra_header=cfg.stamp())
    print(f"wrote {len(records)} samples ({len(records) * N_VIEWS} views) to {out}")
    return EXIT_OK


def cmd_ps_solve(cfg: RunConfig, args) -> int:
    lights_path, stack_path = Path(args.lights), Path(args.stack)
    for p in (lights_path, stack_path):
        if not p.is_file():
            raise ValidationError(f"{p} does not exist")
    try:
        rig = load_light_rig(lights_path)
    except (RigError, ValueError) as exc:
        raise ValidationError(f"{lights_path}: {exc}") from None
    try:
        stack = mvnt.load(stack_path)
    except (mvnt.MVNTError, ValueError) as exc:
        raise ValidationError(f"{stack_path}: {exc}") from None
    if stack.ndim != 3 or stack.shape[0] != rig.k:
        raise ValidationError(f"{lights_path} lists K={rig.k} lights but {stack_path} has shape "
                              f"{stack.shape} (expected K x H x W)")
    opts = SolveOptions(shadow_trim=int(args.shadow_trim), min_albedo=args.min_albedo)
    try:
        nm, albedo, resid = solve_normals(rig, stack, opts)
    except (RigError, ValueError) as exc:
        raise RuntimeError(f"solving {stack_path} with {lights_path}: {exc}") from None
    prefix = Path(args.out_prefix)
    if args.out:
        prefix = Path(args.out) / prefix
    prefix.parent.mkdir(parents=True, exist_ok=True)
    mvnt.save(f"{prefix}_nv.mvnt", nm.normals)
    mvnt.save(f"{prefix}_albedo.mvnt", albedo.albedo)
    mvnt.save(f"{prefix}_residual.mvnt", resid)
    Path(f"{prefix}_run.txt").write_text("\n".join(_stamp_lines(cfg)) + "\n")
    print(f"solved {stack.shape[1]}x{stack.shape[2]} pixels; {int((~nm.valid).sum())} invalid; "
          f"mean residual {float(resid.mean()):.3g}")
    return EXIT_OK


def cmd_calib(cfg: RunConfig, args) -> int:
    cams: list[tuple[str, camera.CameraCalibration, str]] = []
    for f in args.files:
        p = Path(f)
        if not p.is_file():
            raise ValidationError(f"{p} does not exist")
        text = p.read_text()
        try:
            cams.append((str(p), camera.parse_calibration(text), text))
        except camera.CalibrationError as exc:
            raise ValidationError(f"{p}: {exc}") from None
    for i in args.bundled or []:
        if not 1 <= i <= 4:
            raise ValidationError(f"--bundled index {i} is outside 1..4")
        text = camera.bundled_calibration_text(i)
        cams.append((f"camera{i}.yml", camera.parse_calibration(text), text))
    if not cams:
        raise ValidationError("calib needs calibration files or --bundled")
    bad = False
    for name, c, text in cams:
        problems = c.validate()
        print(f"{name}: {c.image_width}x{c.image_height} fx={camera.format_float(c.intrinsics[0, 0])}"
              f" fy={camera.format_float(c.intrinsics[1, 1])}"
              f" {'ok' if not problems else 'INVALID'}")
        for prob in problems:
            print(f"  {prob}")
        bad |= bool(problems)
        if args.roundtrip:
            again = camera.parse_calibration(camera.serialize_calibration(c))
            same = again.field_equal(c)
            print(f"  roundtrip {'ok' if same else 'MISMATCH'}")
            bad |= not same
        if args.project is not None:
            u, v = camera.project_point(c, args.project)
            print(f"  project {args.project} -> ({u!r}, {v!r})")
        if args.homography is not None:
            u, v = camera.apply_homography(c.h_matrix, args.homography)
            print(f"  H {args.homography} -> ({u!r}, {v!r})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, c, _ in cams:
            (out / Path(name).name).write_text(camera.serialize_calibration(c))
        (out / "calib_run.txt").write_text("\n".join(_stamp_lines(cfg)) + "\n")
    return EXIT_INVALID if bad else EXIT_OK


def _check_train_split(root: Path, records, cat: str) -> list:
    train = [r for r in records if r.category == cat and r.split == "train"]
    if not train:
        raise ValidationError(f"category {cat} has no training samples")
    for r in train:
        masked = [v for v in range(N_VIEWS) if (sample_dir(root, r) / f"view_{v}" / "mask.mvnt").exists()]
        if r.label != "normal" or masked:
            raise ValidationError(f"anomalous sample {r.sample_id} found in the train split; "
                                  "training is unsupervised and uses normal samples only")
    return train


def cmd_train(cfg: RunConfig, args) -> int:
    out = _require_out(args)
    root, _, records, cats = _open_dataset(cfg, args)
    plans = {cat: _check_train_split(root, records, cat) for cat in cats}
    for cat in cats:
        if (out / cat / "model.ckpt").exists():
            raise ValidationError(f"{out / cat / 'model.ckpt'} already exists; use a fresh --out")
    out.mkdir(parents=True, exist_ok=True)
    write_run_file(out, cfg)
    tcfg = cfg.model_config()
    for cat in cats:
        model = CprnModel(cfg.encoder, tcfg, (cfg.dataset.height, cfg.dataset.width))
        feats = [_view_inputs(model, root, r, v)[0] for r in plans[cat] for v in range(N_VIEWS)]
        cdir = out / cat
        cdir.mkdir(parents=True, exist_ok=True)
        with open(cdir / "train_log.csv", "w") as log:
            log.write("\n".join(_stamp_lines(cfg, "# ")) + "\nstep,L_total,L_r,L_p\n")

            def record(step, lt, lr_, lp):
                log.write(f"{step},{lt:.12e},{lr_:.12e},{lp:.12e}\n")
                log.flush()

            hist = fit(model, feats, log=record)
        save_checkpoint(model, cdir / "model.ckpt", extra=cfg.stamp() | {"category": cat})
        if hist:
            print(f"{cat}: {len(hist)} steps, L_r {hist[0][2]:.4f} -> {hist[-1][2]:.4f}")
        else:
            print(f"{cat}: 0 steps, checkpoint holds the initial parameters")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    out = _require_out(args)
    root, _, records, cats = _open_dataset(cfg, args)
    ckpt_dir = Path(args.checkpoints) if args.checkpoints else out
    tests = {cat: [r for r in records if r.category == cat and r.split == "test"] for cat in cats}
    for cat in cats:
        if not tests[cat]:
            raise ValidationError(f"category {cat} has no test samples")
        for r in tests[cat]:
            if r.label == "anomalous" and not (sample_dir(root, r) / f"view_{r.defect_view}" / "mask.mvnt").exists():
                raise ValidationError(f"anomalous sample {r.sample_id} has no mask for view {r.defect_view}")
    models = {}
    if not args.oracle_maps:
        missing = [str(ckpt_dir / c / "model.ckpt") for c in cats if not (ckpt_dir / c / "model.ckpt").is_file()]
        if missing:
            raise ValidationError("missing checkpoints: " + ", ".join(missing))
        for cat in cats:
            try:
                model, extra = load_checkpoint(ckpt_dir / cat / "model.ckpt")
            except CheckpointError as exc:
                raise ValidationError(str(exc)) from None
            if extra.get("config_hash") != cfg.config_hash():
                raise ValidationError(
                    f"checkpoint {ckpt_dir / cat / 'model.ckpt'} was trained under config hash "
                    f"{extra.get('config_hash')}, the current config hash is {cfg.config_hash()}")
            models[cat] = model
    out.mkdir(parents=True, exist_ok=True)
    write_run_file(out, cfg)
    results = []
    for cat in cats:
        for rec in tests[cat]:
            for v in range(N_VIEWS):
                if args.oracle_maps:
                    lv = load_view(root, rec, v)
                    amap, score = lv.mask.astype(np.float64), float(lv.mask.any())
                else:
                    feats, lv = _view_inputs(models[cat], root, rec, v)
                    res = infer(models[cat], features=feats)
                    amap, score = res.map, res.image_score
                results.append(ViewResult(cat, rec.sample_id, v, score, amap, lv.mask))
                if args.save_maps:
                    mdir = out / "maps" / cat / rec.sample_id
                    mdir.mkdir(parents=True, exist_ok=True)
                    mvnt.save(mdir / f"view_{v}.mvnt", amap)
    report = evaluate_run(results, N_VIEWS, cfg.eval.fpr_limit)
    stamp = "\n".join(_stamp_lines(cfg, "# ")) + "\n"
    (out / "report.csv").write_text(stamp + report_csv(report))
    table = report_table(report, "all")
    (out / "report.txt").write_text(stamp + table + "\nper-sample max over views\n" + report_table(report, "max"))
    sys.stdout.write(table)
    return EXIT_OK


ROW_ORDER = ("rgb_only", "nv_only", "naive_concat", "ucp_no_lp", "full")
ROW_LABELS = {
    "rgb_only": ("Baseline (RGB only)", "yes", "no", "-"),
    "nv_only": ("Baseline (NV only)", "no", "yes", "-"),
    "naive_concat": ("Naive Fusion (Concat)", "yes", "yes", "Concat"),
    "ucp_no_lp": ("Ours (w/o L_p)", "yes", "yes", "UCP"),
    "full": ("CPRN (Full Model)", "yes", "yes", "UCP + L_p"),
}


def run_row_kind(values: dict[str, str]) -> str:
    """Ablation row of a finished run, read from its resolved train config."""
    mode = values.get("train.modality_mode", "")
    if mode in ("rgb_only", "nv_only", "naive_concat"):
        return mode
    if mode == "rgb_nv":
        return "full" if float(values.get("train.lambda_p", "0")) > 0 else "ucp_no_lp"
    raise ValidationError(f"unrecognised train.modality_mode {mode!r}")


def cmd_report(cfg: RunConfig, args) -> int:
    dirs = [Path(d) for d in args.runs]
    missing = [str(d) for d in dirs if not (d / "report.csv").is_file() or not (d / "run.txt").is_file()]
    if missing:
        raise ValidationError("missing or incomplete run directories: " + ", ".join(missing))
    runs = []
    for d in dirs:
        values = _run_config_values(d)
        try:
            report = parse_report_csv((d / "report.csv").read_text())
        except MetricError as exc:
            raise ValidationError(f"{d / 'report.csv'}: {exc}") from None
        runs.append((d, values, report))
    protocols = {(v.get("eval.protocol"), v.get("eval.fpr_limit")) for _, v, _ in runs}
    if len(protocols) > 1:
        listing = ", ".join(f"{d}: {v.get('eval.protocol')}@{v.get('eval.fpr_limit')}" for d, v, _ in runs)
        raise ValidationError(f"runs use incompatible metric protocols ({listing})")
    rows = []
    for d, values, report in runs:
        kind = run_row_kind(values)
        try:
            m = report.get("mean", "all")
        except KeyError:
            raise ValidationError(f"{d / 'report.csv'} has no mean/all row") from None
        rows.append((ROW_ORDER.index(kind), kind, d, m))
    rows.sort(key=lambda r: r[0])
    header = ["Configuration", "RGB Stream", "NV Stream", "Fusion Strategy", "I-AUROC", "I-F1", "P-AUROC", "P-AUPRO"]
    body = [list(ROW_LABELS[kind]) + ["nan" if math.isnan(x) else f"{x:.3f}" for x in m.values()]
            for _, kind, _, m in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i < 4 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in [header] + body]
    lines.insert(1, "-" * len(lines[0]))
    table = "\n".join(lines) + "\n"
    sys.stdout.write(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        sources = [f"# source={d} config_hash={v.get('config_hash')} seed={v.get('seed')}" for _, _, d, _ in rows
                   for v in [_run_config_values(d)]]
        stamp = "\n".join(_stamp_lines(cfg, "# ") + sources) + "\n"
        (out / "comparison.txt").write_text(stamp + table)
        csv = ["configuration,rgb_stream,nv_stream,fusion,i_auroc,i_f1,p_auroc,p_aupro"]
        csv += [",".join(r) for r in body]
        (out / "comparison.csv").write_text(stamp + "\n".join(csv) + "\n")
    return EXIT_OK


# --- entry point ------------------------------------------------------------------


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _globals(suppress: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", help="flat key=value configuration file", **kw)
    p.add_argument("--seed", type=_seed, help="master seed (overrides run.seed)", **kw)
    p.add_argument("--out", help="output directory", **kw)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mvnad", description=__doc__.splitlines()[0], parents=[_globals(False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = [_globals(True)]

    sub.add_parser("synth", parents=common, help="generate a synthetic multi-view dataset")

    p = sub.add_parser("ps-solve", parents=common, help="solve photometric stereo for one stack")
    p.add_argument("lights")
    p.add_argument("stack")
    p.add_argument("out_prefix")
    p.add_argument("--shadow-trim", action="store_true", help="drop the darkest light per pixel")
    p.add_argument("--min-albedo", type=float, default=1e-8)

    p = sub.add_parser("calib", parents=common, help="parse, check and apply camera calibration files")
    p.add_argument("files", nargs="*")
    p.add_argument("--bundled", type=int, action="append", help="bundled camera index 1-4 (repeatable)")
    p.add_argument("--roundtrip", action="store_true")
    p.add_argument("--project", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--homography", type=float, nargs=2, metavar=("U", "V"))

    for name, text in (("train", "train one model per category"), ("eval", "evaluate checkpoints on the test split")):
        p = sub.add_parser(name, parents=common, help=text)
        p.add_argument("--data", help="dataset root (overrides dataset.root)")
        if name == "eval":
            p.add_argument("--checkpoints", help="run directory holding <category>/model.ckpt (default: --out)")
            p.add_argument("--save-maps", action="store_true", help="write anomaly maps as MVNT files")
            p.add_argument("--oracle-maps", action="store_true", help="debug: use ground-truth masks as maps")

    p = sub.add_parser("report", parents=common, help="merge evaluated runs into one comparison table")
    p.add_argument("runs", nargs="+")
    return parser


COMMANDS = {"synth": cmd_synth, "ps-solve": cmd_ps_solve, "calib": cmd_calib, "train": cmd_train,
            "eval": cmd_eval, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](cfg, args)
    except (ValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (UntrainedModelError, RuntimeError, OSError, ValueError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
