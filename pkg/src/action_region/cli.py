"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import io, synthetic
from .exceptions import ActionRegionError, NumericalError

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    """Inconsistent or missing command-line arguments."""


# ------------------------------------------------------------------ flag groups

def _bool(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _dataclass_flags(parser, cls, prefix, title):
    """``--prefix.field`` for every field of ``cls``; unset flags keep the defaults."""
    group = parser.add_argument_group(title)
    for f in dataclasses.fields(cls):
        default = f.default
        if isinstance(default, bool):
            kind = _bool
        elif isinstance(default, tuple):
            kind = _floats
        elif isinstance(default, (int, float, str)):
            kind = type(default)
        else:
            kind = int
        group.add_argument(f"--{prefix}.{f.name}", dest=f"{prefix}__{f.name}", type=kind,
                           default=None, metavar=kind.__name__.strip("_").upper(),
                           help=f"default: {default}")


def _collect(args, prefix):
    out = {}
    for key, value in vars(args).items():
        if key.startswith(prefix + "__") and value is not None:
            out[key[len(prefix) + 2:]] = value
    return out


def _flow_params(args):
    from .flow import FlowParams
    return FlowParams(**_collect(args, "flow"))


def _forest_params(args):
    from .forest import ForestParams
    return ForestParams(**_collect(args, "forest"))


def _proposer(args):
    from .pipeline import ProposalConfig
    return dataclasses.replace(ProposalConfig(), **_collect(args, "proposals")).proposer()


def _add_flow(parser):
    from .flow import FlowParams
    _dataclass_flags(parser, FlowParams, "flow", "optical flow")


def _add_forest(parser):
    from .forest import ForestParams
    _dataclass_flags(parser, ForestParams, "forest", "boundary forest")


def _add_proposals(parser):
    from .pipeline import ProposalConfig
    _dataclass_flags(parser, ProposalConfig, "proposals", "proposals")


# ------------------------------------------------------------------ inputs

def _manifest_for(path):
    """Manifest of a sequence given as a manifest file or a frame directory."""
    path = Path(path)
    if path.is_file():
        return io.SequenceManifest.load(path)
    if (path / "manifest.json").is_file():
        return io.SequenceManifest.load(path / "manifest.json")
    if path.is_dir():
        names = sorted(p.name for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not names:
            raise ActionRegionError(f"{path}: no frames found")
        return io.SequenceManifest(path, names)
    raise ActionRegionError(f"{path}: no such sequence")


def _expand(paths):
    """Manifest paths from manifests, sequence directories or dataset directories."""
    out = []
    for p in map(Path, paths):
        if p.is_file():
            out.append(p)
        elif (p / "manifest.json").is_file():
            out.append(p / "manifest.json")
        elif p.is_dir():
            found = sorted(p.glob("*/manifest.json"))
            if not found:
                raise ActionRegionError(f"{p}: no sequence manifests found")
            out += found
        else:
            raise ActionRegionError(f"{p}: no such file or directory")
    return out


def _frames(manifest):
    return io.load_sequence(manifest)


def _write_json(path, doc):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _detector(args):
    from .detector import MotionBoundaryDetector
    from .forest import BoundaryForest
    return MotionBoundaryDetector.from_forest(BoundaryForest.load(args.forest), _flow_params(args))


def _region(args, frames):
    """Flows and per-pair boxes from either a proposals file or the forest."""
    from .detector import pair_flows
    flows = pair_flows(frames, _flow_params(args))
    if getattr(args, "proposals_file", None):
        boxes = io.read_proposals(args.proposals_file)
        by_frame = {}
        for b in boxes:
            by_frame.setdefault(b.frame_index, b)
        boxes = [by_frame[t] for t in range(len(flows))]
    else:
        if not args.forest:
            raise UsageError("either --forest or --proposals-file is required")
        boxes = _proposer(args).transform(_detector(args).transform(frames, flows))
    return flows, boxes


# ------------------------------------------------------------------ commands

def cmd_synth_data(args):
    if args.kind == "boundary":
        cfg = synthetic.SyntheticConfig(n_sequences=args.n_sequences, n_frames=args.n_frames,
                                        height=args.size, width=args.size,
                                        camera_speed=args.camera_speed, noise_level=args.noise)
        seqs = synthetic.generate_synthetic_training_set(cfg, args.seed)
    elif args.kind == "abnormality":
        seqs = synthetic.abnormality_suite(args.seed, args.n_frames, args.size)
    else:
        seqs = synthetic.normal_scene_set(args.seed, args.per_scene, args.n_frames, args.size)
    paths = synthetic.write_dataset(seqs, args.out, args.frame_format)
    print(f"wrote {len(paths)} sequences to {args.out}")


def cmd_extract_flow(args):
    from .flow import estimate_flow, estimate_flow_pair
    frames = _frames(_manifest_for(args.input))
    if len(frames) < 2:
        raise ActionRegionError("extract-flow needs at least two frames")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = _flow_params(args)
    for t in range(len(frames) - 1):
        if args.backward:
            fwd, bwd = estimate_flow_pair(frames[t], frames[t + 1], params)
            io.write_flow(bwd, out / f"bwd_{t:04d}.flo")
        else:
            fwd = estimate_flow(frames[t], frames[t + 1], params)
        io.write_flow(fwd, out / f"fwd_{t:04d}.flo")
    print(f"wrote {len(frames) - 1} flow field(s) to {out}")


def cmd_features(args):
    from .detector import pair_flows
    from .features import SPATIAL_NAMES, TEMPORAL_NAMES, assemble_feature_stack
    if args.list:
        print("\n".join(SPATIAL_NAMES + TEMPORAL_NAMES))
        return
    if not (args.input and args.channel and args.out):
        raise UsageError("features needs INPUT, --channel and --out (or --list)")
    frames = _frames(_manifest_for(args.input))
    if not 0 <= args.pair < len(frames) - 1:
        raise ActionRegionError(f"pair {args.pair} out of range for {len(frames)} frames")
    sub = frames[args.pair:args.pair + 2]
    fwd, bwd = pair_flows(sub, _flow_params(args))[0]
    stack = assemble_feature_stack(sub[0], sub[1], fwd, bwd)
    values = stack.combined[args.channel]
    lo, hi = float(values.min()), float(values.max())
    scaled = (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)
    io.write_boundary_map(scaled, args.out)
    print(json.dumps({"channel": args.channel, "min": lo, "max": hi}))


def cmd_train_boundary(args):
    from .detector import MotionBoundaryDetector
    seqs, masks = [], []
    for mpath in _expand(args.data):
        manifest = io.SequenceManifest.load(mpath)
        names = manifest.extra.get("masks")
        if not names:
            raise ActionRegionError(f"{mpath}: manifest lists no truth 'masks'")
        seqs.append(_frames(manifest))
        masks.append(np.stack([io.read_boundary_map(manifest.root / n) >= 0.5 for n in names]))
    det = MotionBoundaryDetector(_flow_params(args), _forest_params(args),
                                 calibrate=not args.no_calibrate, tolerance=args.tolerance)
    det.fit(seqs, masks)
    det.forest_.save(args.out)
    summary = {"sequences": len(seqs), "threshold": det.forest_.threshold_}
    if not args.no_calibrate:
        summary["train_f_measure"] = det.train_f_measure_
    print(json.dumps(summary))


def cmd_predict_boundary(args):
    frames = _frames(_manifest_for(args.input))
    maps = _detector(args).transform(frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t, m in enumerate(maps):
        io.write_boundary_map(m, out / f"map_{t:04d}.pgm")
    print(f"wrote {len(maps)} boundary map(s) to {out}")


def cmd_propose(args):
    from .proposals import crop_and_resize
    frames = None
    if args.maps:
        paths = sorted(Path(args.maps).glob("*.pgm"))
        if not paths:
            raise ActionRegionError(f"{args.maps}: no boundary maps found")
        maps = [io.read_boundary_map(p) for p in paths]
    else:
        if not (args.input and args.forest):
            raise UsageError("propose needs --maps, or INPUT with --forest")
        frames = _frames(_manifest_for(args.input))
        maps = _detector(args).transform(frames)
    proposer = _proposer(args)
    boxes = proposer.transform(maps)
    h, w = maps[0].shape
    io.write_proposals(boxes, args.out, w, h)
    if args.crops:
        if frames is None:
            if not args.input:
                raise UsageError("--crops needs INPUT frames")
            frames = _frames(_manifest_for(args.input))
        out = Path(args.crops)
        out.mkdir(parents=True, exist_ok=True)
        for t, box in enumerate(boxes):
            io.write_frame(out / f"crop_{t:04d}.png", crop_and_resize(frames[t], box))
    print(json.dumps({"frames": len(boxes), "no_motion": sum(proposer.no_motion_)}))


def _descriptors(args, frames, full_frame=False):
    from .classifier import describe_region
    from .detector import pair_flows
    if full_frame:
        flows = pair_flows(frames, _flow_params(args))
        h, w = frames.shape[1:3]
        boxes = [io.BoxProposal(0, 0, w, h, 0.0, t) for t in range(len(flows))]
    else:
        flows, boxes = _region(args, frames)
    fwd = [f for f, _ in flows]
    return np.stack([describe_region(frames[t], fwd[t:t + args.L], boxes[t], args.L)
                     for t in range(len(fwd) - args.L + 1)])


def cmd_train_action(args):
    from .classifier import LinearActionClassifier
    X, y = [], []
    for mpath in _expand(args.data):
        manifest = io.SequenceManifest.load(mpath)
        if manifest.action is None:
            raise ActionRegionError(f"{mpath}: manifest has no action label")
        d = _descriptors(args, _frames(manifest), args.full_frame)
        X.append(d)
        y += [manifest.action] * len(d)
    model = LinearActionClassifier(args.learning_rate, args.epochs, args.l2, args.seed)
    model.fit(np.concatenate(X), y)
    model.save(args.out)
    print(json.dumps({"samples": len(y), "classes": list(model.classes_),
                      "final_loss": float(model.loss_history_[-1])}))


def _action_distribution(args, frames):
    from .classifier import Distribution, LinearActionClassifier
    model = LinearActionClassifier.load(args.model)
    probs = model.predict_proba(_descriptors(args, frames, args.full_frame)).mean(axis=0)
    return Distribution(tuple(model.classes_), probs)


def cmd_classify(args):
    dist = _action_distribution(args, _frames(_manifest_for(args.input)))
    _write_json(args.out, dist.to_dict())


def cmd_learn_prior(args):
    from .abnormality import ColorHistogramSceneClassifier, learn_scene_prior, scene_probability
    manifests = [io.SequenceManifest.load(p) for p in _expand(args.data)]
    sequences = [_frames(m) for m in manifests]
    if args.train_scene_model:
        missing = [str(m.root) for m in manifests if m.scene is None]
        if missing:
            raise ActionRegionError(f"scene labels missing for {missing}")
        scenes = ColorHistogramSceneClassifier().fit([s[0] for s in sequences], [m.scene for m in manifests])
        scenes.save(args.train_scene_model)
    elif args.scene_model:
        scenes = ColorHistogramSceneClassifier.load(args.scene_model)
    else:
        raise UsageError("learn-prior needs --scene-model or --train-scene-model")
    actions = [m.action for m in manifests]
    if any(a is None for a in actions):
        raise ActionRegionError("every manifest needs an action label")
    dists = [scene_probability(s, scenes) for s in sequences]
    vocab = args.scenes.split(",") if args.scenes else tuple(scenes.classes_)
    action_vocab = args.actions.split(",") if args.actions else None
    table = learn_scene_prior(actions, dists, action_vocab, vocab, args.literal)
    table.save(args.out)
    print(json.dumps({"actions": list(table.actions), "scenes": list(table.scenes),
                      "counts": table.counts.tolist()}))


def _decide(args, manifest=None):
    from .abnormality import (AbnormalityDetector, ColorHistogramSceneClassifier, ScenePriorTable,
                              scene_probability)
    from .classifier import load_distribution
    prior = ScenePriorTable.load(args.prior)
    frames = None
    if args.action_dist:
        action = load_distribution(args.action_dist)
    else:
        if not (args.model and manifest is not None):
            raise UsageError("need --action-dist, or INPUT with --model and --forest")
        frames = _frames(manifest)
        action = _action_distribution(args, frames)
    if args.scene_dist:
        scene = load_distribution(args.scene_dist)
    else:
        if not (args.scene_model and manifest is not None):
            raise UsageError("need --scene-dist, or INPUT with --scene-model")
        frames = _frames(manifest) if frames is None else frames
        scene = scene_probability(frames, ColorHistogramSceneClassifier.load(args.scene_model))
    return AbnormalityDetector(args.threshold, args.p_scene).decide(action, scene, prior)


def cmd_detect_abnormal(args):
    manifest = _manifest_for(args.input) if args.input else None
    _write_json(args.out, _decide(args, manifest).to_dict())


def cmd_evaluate_abnormal(args):
    from .abnormality import evaluate_abnormality
    decisions, truths, names = [], [], []
    for mpath in _expand(args.data):
        manifest = io.SequenceManifest.load(mpath)
        if manifest.abnormal is None:
            raise ActionRegionError(f"{mpath}: manifest has no 'abnormal' truth flag")
        decisions.append(_decide(args, manifest))
        truths.append(manifest.abnormal)
        names.append(mpath.parent.name)
    report = evaluate_abnormality(decisions, truths, names)
    _write_json(args.out, report.to_dict())
    print(f"success rate {report.success_rate:.4f} over {len(decisions)} sequences", file=sys.stderr)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def cmd_run(args):
    from .pipeline import PipelineConfig, run_pipeline
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key] = _parse_value(value)
    overrides.update({f"flow.{k}": v for k, v in _collect(args, "flow").items()})
    for key in ("forest", "action_model", "scene_model", "prior"):
        if getattr(args, key) is not None:
            overrides[f"paths.{key}"] = str(Path(getattr(args, key)).resolve())
    if args.threshold is not None:
        overrides["abnormality.threshold"] = args.threshold
    try:
        config = config.with_overrides(overrides)
    except ActionRegionError as exc:
        raise UsageError(str(exc)) from exc
    pipeline = run_pipeline(config, _expand(args.manifests), args.out, force=args.force)
    print(json.dumps({"stages_run": len(pipeline.ran), "skipped": pipeline.skipped}, sort_keys=True))


# ------------------------------------------------------------------ parser

def build_parser():
    parser = argparse.ArgumentParser(prog="action-region", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=fn)
        return p

    p = add("synth-data", cmd_synth_data, "Write a seeded synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=("boundary", "abnormality", "normal"), default="boundary",
                   help="moving squares, the 16-clip action/scene suite, or normal-scene clips")
    p.add_argument("--n-sequences", type=int, default=20)
    p.add_argument("--n-frames", type=int, default=4)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--camera-speed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--per-scene", type=int, default=2, help="clips per normal (action, scene) pair")
    p.add_argument("--frame-format", choices=("png", "ppm"), default="png")

    p = add("extract-flow", cmd_extract_flow, "Estimate optical flow for consecutive frames")
    p.add_argument("input", help="frame directory or manifest")
    p.add_argument("--out", required=True, help="directory for .flo files")
    p.add_argument("--backward", action="store_true", help="also write backward flow")
    _add_flow(p)

    p = add("features", cmd_features, "Dump one feature-stack channel as a 16-bit PGM")
    p.add_argument("input", nargs="?", help="frame directory or manifest")
    p.add_argument("--pair", type=int, default=0, help="frame pair index t (frames t, t+1)")
    p.add_argument("--channel", help="channel name (see --list)")
    p.add_argument("--out", help="output .pgm (min-max scaled)")
    p.add_argument("--list", action="store_true", help="list channel names and exit")
    _add_flow(p)

    p = add("train-boundary", cmd_train_boundary, "Train the structured boundary forest")
    p.add_argument("data", nargs="+", help="manifests or dataset directories with truth masks")
    p.add_argument("--out", required=True, help="forest file")
    p.add_argument("--no-calibrate", action="store_true", help="keep the 0.5 binarisation threshold")
    p.add_argument("--tolerance", type=int, default=2, help="F-measure match tolerance (px)")
    _add_flow(p)
    _add_forest(p)

    p = add("predict-boundary", cmd_predict_boundary, "Predict soft boundary maps")
    p.add_argument("input", help="frame directory or manifest")
    p.add_argument("--forest", required=True)
    p.add_argument("--out", required=True, help="directory for map_XXXX.pgm")
    _add_flow(p)

    p = add("propose", cmd_propose, "Select action-region boxes")
    p.add_argument("input", nargs="?", help="frame directory or manifest")
    p.add_argument("--maps", help="directory of boundary maps (instead of computing them)")
    p.add_argument("--forest", help="forest file, when computing maps")
    p.add_argument("--out", required=True, help="proposals .jsonl")
    p.add_argument("--crops", help="directory for 224x224 crops")
    _add_flow(p)
    _add_proposals(p)

    def classifier_inputs(p):
        p.add_argument("--forest", help="forest file for proposals")
        p.add_argument("--proposals-file", help="use stored proposals instead of the forest")
        p.add_argument("--full-frame", action="store_true", help="describe whole frames, not proposals")
        p.add_argument("--L", type=int, default=1, help="flow fields per descriptor")
        _add_flow(p)
        _add_proposals(p)

    p = add("train-action", cmd_train_action, "Train the built-in linear action classifier")
    p.add_argument("data", nargs="+", help="manifests or dataset directories with action labels")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    classifier_inputs(p)

    p = add("classify", cmd_classify, "Action distribution for one sequence")
    p.add_argument("input", help="frame directory or manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--out", default="-", help="output JSON (default stdout)")
    classifier_inputs(p)

    p = add("learn-prior", cmd_learn_prior, "Learn the scene-given-action prior table")
    p.add_argument("data", nargs="+", help="manifests or dataset directories with action labels")
    p.add_argument("--out", required=True, help="prior table JSON")
    p.add_argument("--scene-model", help="built-in scene classifier file")
    p.add_argument("--train-scene-model", help="fit the scene classifier on labelled scenes, save it here")
    p.add_argument("--scenes", help="comma-separated scene vocabulary")
    p.add_argument("--actions", help="comma-separated action vocabulary")
    p.add_argument("--literal", action="store_true", help="all row mass on the most frequent scene")

    def decision_inputs(p):
        p.add_argument("--prior", required=True, help="prior table JSON")
        p.add_argument("--threshold", type=float, default=0.5)
        p.add_argument("--p-scene", choices=("max", "marginal"), default="max",
                       help="P(S) as the top scene probability or the prior marginal")
        p.add_argument("--action-dist", help="stored action distribution JSON")
        p.add_argument("--scene-dist", help="stored scene distribution JSON")
        p.add_argument("--model", help="action model file")
        p.add_argument("--scene-model", help="scene classifier file")
        p.add_argument("--out", default="-", help="output JSON (default stdout)")
        classifier_inputs(p)

    p = add("detect-abnormal", cmd_detect_abnormal, "Abnormality decision for one sequence")
    p.add_argument("input", nargs="?", help="frame directory or manifest")
    decision_inputs(p)

    p = add("evaluate-abnormal", cmd_evaluate_abnormal, "Success rate over a labelled suite")
    p.add_argument("data", nargs="+", help="manifests or dataset directories with 'abnormal' flags")
    decision_inputs(p)

    p = add("run", cmd_run, "Run the full pipeline with on-disk caching")
    p.add_argument("manifests", nargs="+", help="manifests or dataset directories")
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    p.add_argument("--force", action="store_true", help="recompute cached stages")
    p.add_argument("--forest")
    p.add_argument("--action-model")
    p.add_argument("--scene-model")
    p.add_argument("--prior")
    p.add_argument("--threshold", type=float)
    _add_flow(p)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ActionRegionError, ValueError, OSError) as exc:
        cause = getattr(exc, "cause", None)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(cause, NumericalError) else EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
