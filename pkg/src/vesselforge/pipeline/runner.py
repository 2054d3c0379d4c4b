"""Stage execution with a content-hash manifest, caching and partial-artifact handling."""

from __future__ import annotations

import fnmatch
import hashlib
import json
import logging
import os
import zlib
from pathlib import Path

import numpy as np

from .config import DEPENDENCIES, DependencyError, PipelineConfig

log = logging.getLogger("vesselforge.pipeline")

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1

# Files each stage reads, as patterns over upstream outputs.  Required patterns
# must match at least one recorded artifact.
INPUTS = {
    "phantom": ((), ()),
    "train": (("phantom/train_cases/*",), ()),
    "segment": (("phantom/image.nrrd", "train/net.logb"), ()),
    "reconstruct": (("segment/prob_mean.nrrd",), ()),
    "deform": (("phantom/image.nrrd", "reconstruct/mesh.obj"), ("phantom/io.json",)),
    "evaluate": (
        ("phantom/image.nrrd", "segment/seg.nrrd", "segment/samples/*", "reconstruct/mesh.obj"),
        ("phantom/label.nrrd", "phantom/truth.obj", "phantom/spec.json", "deform/deformed.obj"),
    ),
}

# Parameter blocks that feed each stage's cache key.
PARAM_BLOCKS = {
    "phantom": ("phantom",),
    "train": ("network", "train", "preprocess"),
    "segment": ("segment", "preprocess"),
    "reconstruct": ("reconstruct",),
    "deform": ("deform",),
    "evaluate": ("evaluate", "segment"),
}


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class AuditError(RuntimeError):
    pass


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def stage_seed(seed, stage):
    return int(np.random.SeedSequence([seed, zlib.crc32(stage.encode())]).generate_state(1)[0])


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class StageContext:
    """Handle given to a stage: declared inputs, registered outputs, seed and params."""

    def __init__(self, out_dir: Path, stage, cfg: PipelineConfig, inputs, external=None):
        self.out_dir = out_dir
        self.stage = stage
        self.cfg = cfg
        self.inputs = dict(inputs)
        self.external = dict(external or {})
        self.outputs = []
        self.seed = stage_seed(cfg.seed, stage)

    def has(self, rel):
        return rel in self.inputs

    def input(self, rel):
        if rel not in self.inputs:
            raise AuditError(f"stage {self.stage!r} read undeclared input {rel!r}")
        return self.out_dir / rel

    def inputs_matching(self, pattern):
        return [self.input(r) for r in sorted(self.inputs) if fnmatch.fnmatchcase(r, pattern)]

    def external_input(self, name):
        """A file of ``input_dir``; only names hashed before the stage ran are allowed."""
        path = Path(self.cfg.input_dir) / name
        if str(path) not in self.external:
            raise AuditError(f"stage {self.stage!r} read undeclared external input {str(path)!r}")
        return path

    def output(self, rel):
        path = self.out_dir / self.stage / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(path)
        return path


class Manifest:
    def __init__(self, out_dir: Path):
        self.path = out_dir / MANIFEST
        self.doc = {"version": MANIFEST_VERSION, "stages": {}}
        if self.path.exists():
            with open(self.path) as fh:
                doc = json.load(fh)
            if doc.get("version") == MANIFEST_VERSION:
                self.doc = doc

    @property
    def stages(self):
        return self.doc["stages"]

    def artifacts(self):
        out = {}
        for entry in self.stages.values():
            out.update(entry["outputs"])
        return out

    def save(self):
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            json.dump(self.doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, self.path)


def _resolve_inputs(stage, available):
    required, optional = INPUTS[stage]
    found = {}
    for pat in required:
        hits = [r for r in available if fnmatch.fnmatchcase(r, pat)]
        if not hits:
            producer = pat.split("/")[0]
            raise DependencyError(f"stage {stage!r} needs {pat!r} from the {producer!r} stage, which is missing")
        found.update({r: available[r] for r in hits})
    for pat in optional:
        found.update({r: available[r] for r in available if fnmatch.fnmatchcase(r, pat)})
    return found


def check_dependencies(cfg: PipelineConfig, manifest: Manifest):
    """Fail before running anything if a stage's upstream is neither scheduled nor on disk."""
    have = {s for s, e in manifest.stages.items() if _outputs_intact(manifest.path.parent, e)}
    for stage in cfg.stages:
        missing = [d for d in DEPENDENCIES[stage] if d not in have]
        if missing:
            names = ", ".join(repr(d) for d in missing)
            raise DependencyError(f"stage {stage!r} requires output of stage(s) {names}")
        have.add(stage)


def _outputs_intact(out_dir, entry):
    for rel, digest in entry["outputs"].items():
        p = out_dir / rel
        if not p.exists() or sha256_file(p) != digest:
            return False
    return True


EXTERNAL_FILES = ("image.nrrd", "label.nrrd", "io.json")


def _external_inputs(cfg, stage):
    if stage != "phantom" or cfg.params["phantom"]["kind"] != "import":
        return {}
    out = {}
    for name in EXTERNAL_FILES:
        p = Path(cfg.input_dir) / name
        if p.exists():
            out[str(p)] = sha256_file(p)
    if str(Path(cfg.input_dir) / "image.nrrd") not in out:
        raise DependencyError(f"import needs {Path(cfg.input_dir) / 'image.nrrd'}")
    return out


def _stage_key(cfg, stage, inputs, external=None):
    from .. import __version__

    doc = {
        "stage": stage,
        "version": __version__,
        "seed": stage_seed(cfg.seed, stage),
        "params": {b: cfg.params[b] for b in PARAM_BLOCKS[stage]},
        "inputs": inputs,
    }
    if stage == "phantom":
        doc["case"] = cfg.case
        doc["input_dir"] = cfg.input_dir
    if external:
        doc["external"] = external
    return hashlib.sha256(_canonical(doc).encode()).hexdigest()


def _mark_partial(paths):
    for p in paths:
        if p.exists():
            os.replace(p, p.with_name(p.name + ".partial"))


def run_stage(stage, cfg: PipelineConfig, out_dir: Path, manifest: Manifest, func, force=False):
    """Run (or reuse) one stage and record it in the manifest.  Returns True if it ran."""
    available = manifest.artifacts()
    inputs = _resolve_inputs(stage, available)
    external = _external_inputs(cfg, stage)
    key = _stage_key(cfg, stage, inputs, external)
    old = manifest.stages.get(stage)
    if not force and old is not None and old["key"] == key and _outputs_intact(out_dir, old):
        log.info("stage %s: cached", stage)
        return False
    if old is not None:
        for rel in old["outputs"]:
            p = out_dir / rel
            if p.exists():
                p.unlink()
        del manifest.stages[stage]
        # downstream entries are now stale; their keys will no longer match
    ctx = StageContext(out_dir, stage, cfg, inputs, external)
    log.info("stage %s: running", stage)
    try:
        func(ctx)
    except Exception as exc:
        _mark_partial(ctx.outputs)
        manifest.save()
        raise StageError(stage, exc) from exc
    outputs = {}
    for p in sorted(set(ctx.outputs)):
        if not p.exists():
            _mark_partial(ctx.outputs)
            manifest.save()
            raise StageError(stage, f"declared output {p.name} was not written")
        outputs[p.relative_to(out_dir).as_posix()] = sha256_file(p)
    entry = {"key": key, "seed": ctx.seed, "inputs": inputs, "outputs": outputs}
    if external:
        entry["external_inputs"] = external
    manifest.stages[stage] = entry
    manifest.save()
    return True


def run_pipeline(cfg: PipelineConfig, stages=None, force=False):
    """Execute ``stages`` (default: the config's list) in dependency order.

    Returns the manifest document.  Raises DependencyError before any work if
    an upstream output is unavailable, and StageError if a stage fails.
    """
    from .reports import emit_reports
    from .stages import STAGE_FUNCS

    if stages is not None:
        cfg = cfg.replace(stages=list(stages))
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out_dir)
    manifest.doc["seed"] = cfg.seed
    check_dependencies(cfg, manifest)
    for stage in cfg.stages:
        run_stage(stage, cfg, out_dir, manifest, STAGE_FUNCS[stage], force=force)
    manifest.doc["reports"] = emit_reports(out_dir)["hashes"]
    manifest.save()
    return manifest.doc
