"""End-to-end pipeline with on-disk stage caching.

Stages run in order, and each one reads only the files written by the
stages before it:

    flow -> boundary -> proposals -> crops -> action -> scene -> decision

A stage is skipped when all of its outputs already exist, unless ``force``
is set. Stages whose model or prior is not configured are skipped along with
everything downstream of them. Outputs for a sequence named ``NAME``::

    OUT/config.json                     effective configuration
    OUT/NAME/flow/fwd_0000.flo ...      forward and backward flow per pair
    OUT/NAME/boundary/map_0000.pgm      soft boundary map per pair
    OUT/NAME/proposals.jsonl            selected box per pair
    OUT/NAME/no_motion.json             per-pair fallback flags
    OUT/NAME/crops/crop_0000.png        224x224 spatial crops
    OUT/NAME/action.json                action distribution
    OUT/NAME/scene.json                 scene distribution
    OUT/NAME/decision.json              abnormality decision
    OUT/decisions.jsonl                 all decisions, in input order
    OUT/evaluation.json                 success rate, when truth flags exist
"""
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io
from .abnormality import (AbnormalityDecision, AbnormalityDetector, ColorHistogramSceneClassifier,
                          FileSceneProvider, ScenePriorTable, evaluate_abnormality, scene_probability)
from .classifier import (FileActionProvider, LinearActionClassifier, LinearModelProvider,
                         load_distribution)
from .detector import pair_flows, pair_stacks
from .exceptions import ActionRegionError, DataError
from .flow import FlowParams
from .forest import BoundaryForest, ForestParams
from .proposals import ActionRegionProposer, crop_and_resize


@dataclass(frozen=True)
class ProposalConfig:
    scales: tuple = (32, 48, 64, 96, 128)
    aspect_ratios: tuple = (0.5, 2 / 3, 1.0, 1.5, 2.0)
    step_fraction: float = 0.1
    border_strip: int = 0
    interior_weight: float = 1.5
    border_penalty: float = 1.0
    nms_iou: float = 0.5
    top_k: int = 1
    min_score: float = 1e-3
    thin: bool = True
    temporal_smoothing: bool = False

    def proposer(self):
        d = asdict(self)
        d["scales"], d["aspect_ratios"] = tuple(d["scales"]), tuple(d["aspect_ratios"])
        return ActionRegionProposer(**d)


@dataclass(frozen=True)
class ClassifierConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    l2: float = 1e-4
    seed: int = 0
    L: int = 1
    crop_side: int = 224


@dataclass(frozen=True)
class AbnormalityConfig:
    threshold: float = 0.5
    p_scene_mode: str = "max"
    literal_prior: bool = False


@dataclass(frozen=True)
class ProviderConfig:
    action: str = "builtin"     # "builtin" or "file"
    scene: str = "builtin"      # "builtin" or "file"
    # with "file", the manifest key holding the distribution path (relative to its root)
    action_key: str = "action_probabilities"
    scene_key: str = "scene_probabilities"


@dataclass(frozen=True)
class PathConfig:
    forest: str = None
    action_model: str = None
    scene_model: str = None
    prior: str = None


_SECTIONS = {
    "flow": FlowParams,
    "forest": ForestParams,
    "proposals": ProposalConfig,
    "classifier": ClassifierConfig,
    "abnormality": AbnormalityConfig,
    "providers": ProviderConfig,
    "paths": PathConfig,
}


def _tuples(value):
    return tuple(value) if isinstance(value, list) else value


@dataclass(frozen=True)
class PipelineConfig:
    flow: FlowParams = field(default_factory=FlowParams)
    forest: ForestParams = field(default_factory=ForestParams)
    proposals: ProposalConfig = field(default_factory=ProposalConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    abnormality: AbnormalityConfig = field(default_factory=AbnormalityConfig)
    providers: ProviderConfig = field(default_factory=ProviderConfig)
    paths: PathConfig = field(default_factory=PathConfig)

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise DataError("config must be a JSON object")
        unknown = set(doc) - set(_SECTIONS)
        if unknown:
            raise DataError(f"unknown config section(s): {sorted(unknown)}")
        kwargs = {}
        for name, section in _SECTIONS.items():
            values = doc.get(name, {})
            if not isinstance(values, dict):
                raise DataError(f"config section {name!r} must be an object")
            allowed = {f.name for f in fields(section)}
            bad = set(values) - allowed
            if bad:
                raise DataError(f"unknown key(s) in {name!r}: {sorted(bad)}")
            kwargs[name] = section(**{k: _tuples(v) for k, v in values.items()})
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self):
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def with_overrides(self, overrides):
        """Apply ``{"section.key": value}`` overrides."""
        doc = self.to_dict()
        for dotted, value in overrides.items():
            section, _, key = dotted.partition(".")
            if section not in doc or key not in doc[section]:
                raise DataError(f"unknown config key {dotted!r}")
            doc[section][key] = value
        return PipelineConfig.from_dict(doc)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


class StageError(ActionRegionError):
    """A pipeline stage failed; ``cause`` is the original exception."""

    def __init__(self, stage, sequence, cause):
        super().__init__(f"stage {stage!r} failed on {sequence!r}: {cause}")
        self.stage = stage
        self.sequence = sequence
        self.cause = cause


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _names(manifest_paths):
    names = []
    for p in manifest_paths:
        p = Path(p)
        base = p.parent.name if p.stem == "manifest" else p.stem
        name, k = base, 1
        while name in names:
            k += 1
            name = f"{base}_{k}"
        names.append(name)
    return names


class _Sequence:
    def __init__(self, manifest_path, out):
        self.manifest = io.SequenceManifest.load(manifest_path)
        self.out = Path(out)
        self._frames = None
        if len(self.manifest.frames) < 2:
            raise DataError("the pipeline needs at least two frames per sequence")

    @property
    def frames(self):
        if self._frames is None:
            self._frames = io.load_sequence(self.manifest)
        return self._frames

    @property
    def n_pairs(self):
        return len(self.manifest.frames) - 1

    def flow_paths(self):
        return [(self.out / "flow" / f"fwd_{t:04d}.flo", self.out / "flow" / f"bwd_{t:04d}.flo")
                for t in range(self.n_pairs)]

    def flows(self):
        return [(io.read_flow(f), io.read_flow(b)) for f, b in self.flow_paths()]

    def map_paths(self):
        return [self.out / "boundary" / f"map_{t:04d}.pgm" for t in range(self.n_pairs)]

    def crop_paths(self):
        return [self.out / "crops" / f"crop_{t:04d}.png" for t in range(self.n_pairs)]


class Pipeline:
    """Runs the stages over a list of sequence manifests."""

    STAGES = ("flow", "boundary", "proposals", "crops", "action", "scene", "decision")

    def __init__(self, config=None, force=False):
        self.config = config or PipelineConfig()
        self.force = force
        self.ran = []       # (sequence, stage) pairs actually executed
        self.skipped = {}   # stage -> reason, for stages not configured

    def _load_models(self):
        paths, prov = self.config.paths, self.config.providers
        self.forest = BoundaryForest.load(paths.forest) if paths.forest else None
        self.action_model = self.scene_model = self.prior = None
        if prov.action not in ("builtin", "file") or prov.scene not in ("builtin", "file"):
            raise DataError("providers must be 'builtin' or 'file'")
        if prov.action == "builtin" and paths.action_model:
            self.action_model = LinearActionClassifier.load(paths.action_model)
        if prov.scene == "builtin" and paths.scene_model:
            self.scene_model = ColorHistogramSceneClassifier.load(paths.scene_model)
        if paths.prior:
            self.prior = ScenePriorTable.load(paths.prior)
            if self.config.abnormality.literal_prior:
                self.prior = self.prior.literal()

    def _enabled(self):
        prov = self.config.providers
        builtin_action = prov.action == "builtin"
        requirement = {
            "boundary": self.forest is not None or "no forest configured",
            "action": not builtin_action or self.action_model is not None or "no action model configured",
            "scene": prov.scene == "file" or self.scene_model is not None or "no scene model configured",
            "decision": self.prior is not None or "no prior configured",
        }
        depends = {"boundary": ["flow"], "proposals": ["boundary"], "crops": ["proposals"],
                   "action": ["proposals"] if builtin_action else [], "decision": ["action", "scene"]}
        enabled = []
        for stage in self.STAGES:
            reason = requirement.get(stage, True)
            missing = [d for d in depends.get(stage, []) if d not in enabled]
            if reason is True and missing:
                reason = f"stage {missing[0]!r} is skipped"
            if reason is True:
                enabled.append(stage)
            else:
                self.skipped[stage] = reason
        return enabled

    def run(self, manifest_paths, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.config.save(out / "config.json")
        self._load_models()
        enabled = self._enabled()
        decisions, truths, names = [], [], []
        for name, mpath in zip(_names(manifest_paths), manifest_paths):
            try:
                seq = _Sequence(mpath, out / name)
            except ActionRegionError as exc:
                raise StageError("load", name, exc) from exc
            except (OSError, ValueError) as exc:
                raise StageError("load", name, DataError(str(exc))) from exc
            for stage in enabled:
                self._run_stage(stage, seq, name)
            if "decision" in enabled:
                decisions.append(json.loads((seq.out / "decision.json").read_text()))
                truths.append(seq.manifest.abnormal)
                names.append(name)
        if decisions:
            lines = "".join(json.dumps({"sequence": n, **d}, sort_keys=True) + "\n"
                            for n, d in zip(names, decisions))
            (out / "decisions.jsonl").write_text(lines)
            if all(t is not None for t in truths):
                report = evaluate_abnormality([AbnormalityDecision(**d) for d in decisions], truths, names)
                _write_json(out / "evaluation.json", report.to_dict())
        return out

    def _run_stage(self, stage, seq, name):
        outputs = getattr(self, f"_{stage}_outputs")(seq)
        if not self.force and all(p.exists() for p in outputs):
            return
        try:
            for p in outputs:
                p.parent.mkdir(parents=True, exist_ok=True)
            getattr(self, f"_stage_{stage}")(seq)
        except ActionRegionError as exc:
            raise StageError(stage, name, exc) from exc
        except (OSError, ValueError) as exc:
            raise StageError(stage, name, DataError(str(exc))) from exc
        self.ran.append((name, stage))

    # ---------------------------------------------------------- stages

    def _flow_outputs(self, seq):
        return [p for pair in seq.flow_paths() for p in pair]

    def _stage_flow(self, seq):
        for (fwd, bwd), (pf, pb) in zip(pair_flows(seq.frames, self.config.flow), seq.flow_paths()):
            io.write_flow(fwd, pf)
            io.write_flow(bwd, pb)

    def _boundary_outputs(self, seq):
        return seq.map_paths()

    def _stage_boundary(self, seq):
        flows = [(f.astype(np.float64), b.astype(np.float64)) for f, b in seq.flows()]
        maps = [self.forest.predict_map(s) for s in pair_stacks(seq.frames, flows)]
        for m, p in zip(maps, seq.map_paths()):
            io.write_boundary_map(m, p)

    def _proposals_outputs(self, seq):
        return [seq.out / "proposals.jsonl", seq.out / "no_motion.json"]

    def _stage_proposals(self, seq):
        maps = [io.read_boundary_map(p) for p in seq.map_paths()]
        proposer = self.config.proposals.proposer()
        boxes = proposer.transform(maps)
        h, w = maps[0].shape
        io.write_proposals(boxes, seq.out / "proposals.jsonl", w, h)
        _write_json(seq.out / "no_motion.json", [bool(x) for x in proposer.no_motion_])

    def _boxes(self, seq):
        boxes = io.read_proposals(seq.out / "proposals.jsonl")
        by_frame = {}
        for b in boxes:
            by_frame.setdefault(b.frame_index, b)
        return [by_frame[t] for t in range(seq.n_pairs)]

    def _crops_outputs(self, seq):
        return seq.crop_paths()

    def _stage_crops(self, seq):
        side = self.config.classifier.crop_side
        for t, (box, p) in enumerate(zip(self._boxes(seq), seq.crop_paths())):
            io.write_frame(p, crop_and_resize(seq.frames[t], box, side))

    def _action_outputs(self, seq):
        return [seq.out / "action.json"]

    def _stage_action(self, seq):
        prov = self.config.providers
        if prov.action == "file":
            dist = FileActionProvider(self._manifest_file(seq, prov.action_key)).action_probabilities()
        else:
            cfg = self.config.classifier
            provider = LinearModelProvider(self.action_model, cfg.L, cfg.crop_side)
            flows = [f.astype(np.float64) for f, _ in seq.flows()]
            dist = provider.action_probabilities(seq.frames, self._boxes(seq), flows)
        _write_json(seq.out / "action.json", dist.to_dict())

    def _scene_outputs(self, seq):
        return [seq.out / "scene.json"]

    def _stage_scene(self, seq):
        prov = self.config.providers
        if prov.scene == "file":
            provider = FileSceneProvider(self._manifest_file(seq, prov.scene_key))
            dist = provider.scene_probabilities()
        else:
            dist = scene_probability(seq.frames, self.scene_model)
        _write_json(seq.out / "scene.json", dist.to_dict())

    def _decision_outputs(self, seq):
        return [seq.out / "decision.json"]

    def _stage_decision(self, seq):
        action = load_distribution(seq.out / "action.json")
        scene = load_distribution(seq.out / "scene.json")
        cfg = self.config.abnormality
        detector = AbnormalityDetector(cfg.threshold, cfg.p_scene_mode)
        _write_json(seq.out / "decision.json", detector.decide(action, scene, self.prior).to_dict())

    @staticmethod
    def _manifest_file(seq, key):
        rel = seq.manifest.extra.get(key)
        if rel is None:
            raise DataError(f"manifest has no {key!r} entry for the file provider")
        return seq.manifest.root / rel


def run_pipeline(config, manifest_paths, out_dir, force=False):
    """Run every configured stage; returns the ``Pipeline`` for inspection."""
    pipeline = Pipeline(config, force)
    pipeline.run(manifest_paths, out_dir)
    return pipeline

