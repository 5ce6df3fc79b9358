"""Dataset-construction pipeline: instruction templating, pluggable
model backends (deterministic mocks by default), merge + filter stages
with re-sampling, and a JSONL manifest.

Every external model sits behind a small interface; the shipped mocks
are pure functions of their inputs and seeds, so a whole pipeline run is
reproducible byte for byte.  Real HTTP clients can implement the same
interfaces without touching the orchestration.
"""
from __future__ import annotations

import abc
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySlot, InstructionError, MissingSlot, SlotSyntaxError, UnknownAction
from .grid import SparseStructure, StructuredLatent, make_latent
from .merge import (
    DEFAULT_CONNECTIVITY,
    Threshold,
    apply_flip,
    diff_xor,
    label_components,
    select_components,
    slat_merge,
)
from .nvx import write_nvx

# --- instruction templating ---------------------------------------------

ACTION_SLOTS = {
    "add": ("element", "location"),
    "remove": ("target",),
    "replace": ("original", "replacement"),
}

_RENDERERS = {
    "add": lambda s: f"Add {s['element']} to {s['location']}",
    "remove": lambda s: f"Remove {s['target']}",
    "replace": lambda s: f"Replace {s['original']} with {s['replacement']}",
}

# the trailing slot must not contain the phrase that separates it from the
# one before, or the rendered string cannot be parsed back
_TRAILING_SEPARATOR = {"add": (" to ", "location"), "replace": (" with ", "replacement")}


@dataclass(frozen=True)
class EditInstruction:
    action: str
    slots: dict
    rendered: str

    def to_json_dict(self) -> dict:
        return {
            "action": self.action,
            "slots": {k: self.slots[k] for k in ACTION_SLOTS[self.action]},
            "rendered": self.rendered,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "EditInstruction":
        ins = render_instruction(obj["action"], obj["slots"])
        if obj.get("rendered") != ins.rendered:
            raise InstructionError(f"stored rendering {obj.get('rendered')!r} disagrees with slots")
        return ins


def render_instruction(action: str, slots: dict) -> EditInstruction:
    """Fill one of the three instruction grammars and validate the slots."""
    action = str(action).lower()
    if action not in ACTION_SLOTS:
        raise UnknownAction(f"action must be one of {sorted(ACTION_SLOTS)}, got {action!r}")
    wanted = ACTION_SLOTS[action]
    for name in wanted:
        if name not in slots:
            raise MissingSlot(f"{action!r} instruction needs slot {name!r}")
        value = slots[name]
        if not isinstance(value, str) or not value.strip():
            raise EmptySlot(f"slot {name!r} must be a non-empty string")
        if "\n" in value or "\r" in value:
            raise SlotSyntaxError(f"slot {name!r} must not contain newlines")
    unknown = set(slots) - set(wanted)
    if unknown:
        raise MissingSlot(f"unexpected slots {sorted(unknown)} for action {action!r}")
    sep = _TRAILING_SEPARATOR.get(action)
    if sep and sep[0] in slots[sep[1]]:
        raise SlotSyntaxError(f"slot {sep[1]!r} must not contain {sep[0]!r}")
    clean = {k: slots[k] for k in wanted}
    return EditInstruction(action=action, slots=clean, rendered=_RENDERERS[action](clean))


def parse_instruction(text: str) -> EditInstruction:
    """Inverse of :func:`render_instruction` on grammar-valid strings.

    The two-slot grammars split on the last occurrence of their separator
    phrase, matching the render-side constraint on the trailing slot.
    """
    if text.startswith("Add "):
        body = text[len("Add "):]
        head, sep, tail = body.rpartition(" to ")
        if not sep:
            raise InstructionError(f"cannot parse add instruction {text!r}")
        return render_instruction("add", {"element": head, "location": tail})
    if text.startswith("Remove "):
        return render_instruction("remove", {"target": text[len("Remove "):]})
    if text.startswith("Replace "):
        body = text[len("Replace "):]
        head, sep, tail = body.rpartition(" with ")
        if not sep:
            raise InstructionError(f"cannot parse replace instruction {text!r}")
        return render_instruction("replace", {"original": head, "replacement": tail})
    raise InstructionError(f"no instruction grammar matches {text!r}")


# --- manifest records -----------------------------------------------------

_RECORD_FIELDS = (
    "id",
    "status",
    "attempt",
    "instruction",
    "source_image",
    "edited_image",
    "source_structure",
    "edited_structure",
    "merged_structure",
    "source_slat",
    "merged_slat",
    "voxel_sum_src",
    "voxel_sum_tgt",
    "mask_component_sizes",
    "mask_selected_sizes",
    "policy",
    "filter_reason",
    "error",
)

STATUSES = ("ok", "filtered", "failed")


@dataclass
class ManifestRecord:
    id: str
    status: str = "failed"
    attempt: int = 1
    instruction: EditInstruction | None = None
    source_image: str | None = None
    edited_image: str | None = None
    source_structure: str | None = None
    edited_structure: str | None = None
    merged_structure: str | None = None
    source_slat: str | None = None
    merged_slat: str | None = None
    voxel_sum_src: int | None = None
    voxel_sum_tgt: int | None = None
    mask_component_sizes: list = field(default_factory=list)
    mask_selected_sizes: list = field(default_factory=list)
    policy: dict | None = None
    filter_reason: str | None = None
    error: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"status must be one of {STATUSES}, got {self.status!r}")
        if self.attempt < 1:
            raise ValueError("attempt must be >= 1")

    def to_json_dict(self) -> dict:
        out = {}
        for name in _RECORD_FIELDS:
            value = getattr(self, name)
            if name == "instruction" and value is not None:
                value = value.to_json_dict()
            out[name] = value
        for key in sorted(self.extra):
            out[key] = self.extra[key]
        return out

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ManifestRecord":
        known = {k: obj[k] for k in _RECORD_FIELDS if k in obj}
        if known.get("instruction") is not None:
            known["instruction"] = EditInstruction.from_json_dict(known["instruction"])
        extra = {k: v for k, v in obj.items() if k not in _RECORD_FIELDS}
        return cls(**known, extra=extra)


@dataclass(frozen=True)
class MalformedLine:
    line_no: int
    message: str


def record_to_line(record: ManifestRecord) -> str:
    return json.dumps(record.to_json_dict(), ensure_ascii=False, separators=(",", ":")) + "\n"


def append_record(path, record: ManifestRecord) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(record_to_line(record))


def load_manifest(path) -> tuple[list[ManifestRecord], list[MalformedLine]]:
    """Read a JSONL manifest; bad lines are skipped but always reported."""
    records: list[ManifestRecord] = []
    malformed: list[MalformedLine] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("line is not a JSON object")
                records.append(ManifestRecord.from_json_dict(obj))
            except Exception as exc:  # noqa: BLE001 - report, never crash the load
                malformed.append(MalformedLine(line_no=line_no, message=str(exc)))
    return records, malformed


# --- backend interfaces ---------------------------------------------------


class InstructionBackend(abc.ABC):
    @abc.abstractmethod
    def propose(self, image_ref: str, seed: int) -> EditInstruction:
        ...


class ImageEditorBackend(abc.ABC):
    @abc.abstractmethod
    def edit(self, image_ref: str, instruction: EditInstruction, seed: int) -> str:
        ...


class GeneratorBackend(abc.ABC):
    @abc.abstractmethod
    def generate(self, image_ref: str, seed: int) -> tuple[SparseStructure, StructuredLatent]:
        ...


class FilterBackend(abc.ABC):
    @abc.abstractmethod
    def judge(self, record: ManifestRecord) -> tuple[bool, str]:
        ...


@dataclass
class BackendSuite:
    instruction: InstructionBackend
    image_editor: ImageEditorBackend
    generator: GeneratorBackend
    quality_filter: FilterBackend


def derive_seed(*parts) -> int:
    """Stable 64-bit sub-seed from arbitrary labeled parts."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# --- deterministic mocks ---------------------------------------------------

_ELEMENTS = ("a red hat", "a small flag", "a round window", "a side pouch", "an antenna")
_LOCATIONS = ("the roof", "the left arm", "the front panel", "the top edge", "the base")
_TARGETS = ("the left wing", "the rear fin", "the small handle", "the top spike", "the side plate")
_REPLACEMENTS = ("a torch", "a shield", "a wooden beam", "a glass dome", "a short mast")


class MockInstructionBackend(InstructionBackend):
    """Seeded template filler standing in for a vision-language model."""

    def propose(self, image_ref: str, seed: int) -> EditInstruction:
        rng = _rng(derive_seed("instruction", image_ref, seed))
        action = ("add", "remove", "replace")[rng.integers(3)]
        if action == "add":
            slots = {"element": _ELEMENTS[rng.integers(len(_ELEMENTS))],
                     "location": _LOCATIONS[rng.integers(len(_LOCATIONS))]}
        elif action == "remove":
            slots = {"target": _TARGETS[rng.integers(len(_TARGETS))]}
        else:
            slots = {"original": _TARGETS[rng.integers(len(_TARGETS))],
                     "replacement": _REPLACEMENTS[rng.integers(len(_REPLACEMENTS))]}
        return render_instruction(action, slots)


class MockImageEditor(ImageEditorBackend):
    """Derives an edited-image token from the source token and instruction."""

    def edit(self, image_ref: str, instruction: EditInstruction, seed: int) -> str:
        digest = hashlib.sha256(
            f"{image_ref}\x1f{instruction.rendered}\x1f{seed}".encode("utf-8")
        ).hexdigest()[:16]
        return f"{image_ref}::edit::{digest}"


class MockGeneratorBackend(GeneratorBackend):
    """Synthesizes a blobby structure + latents from an image token.

    Tokens produced by :class:`MockImageEditor` regenerate the source
    shape and then plant one sizeable edited region plus a few tiny
    specks, mimicking the noisy output of a real geometry editor.
    """

    def __init__(self, resolution: int = 32, channels: int = 8):
        self.resolution = int(resolution)
        self.channels = int(channels)

    def _base_grid(self, token: str) -> np.ndarray:
        rng = _rng(derive_seed("generate-base", token))
        r = self.resolution
        grid = np.zeros((r, r, r), dtype=bool)
        for _ in range(int(rng.integers(2, 5))):
            size = rng.integers(r // 4, r // 2, size=3)
            lo = np.array([rng.integers(0, r - s + 1) for s in size])
            grid[lo[0]:lo[0] + size[0], lo[1]:lo[1] + size[1], lo[2]:lo[2] + size[2]] = True
        return grid

    def _plant_edit(self, grid: np.ndarray, digest: str) -> np.ndarray:
        rng = _rng(derive_seed("generate-edit", digest))
        r = self.resolution
        grid = grid.copy()
        # one significant region, flipped as a whole
        size = rng.integers(5, 9, size=3)
        lo = np.array([rng.integers(0, r - s + 1) for s in size])
        region = (slice(lo[0], lo[0] + size[0]), slice(lo[1], lo[1] + size[1]),
                  slice(lo[2], lo[2] + size[2]))
        grid[region] = ~grid[region]
        # a few single-voxel specks of spurious change
        for _ in range(int(rng.integers(2, 6))):
            x, y, z = rng.integers(0, r, size=3)
            grid[x, y, z] = not grid[x, y, z]
        return grid

    def generate(self, image_ref: str, seed: int) -> tuple[SparseStructure, StructuredLatent]:
        base_token, sep, digest = image_ref.partition("::edit::")
        grid = self._base_grid(base_token)
        if sep:
            grid = self._plant_edit(grid, digest)
        structure = SparseStructure.from_dense(grid)
        lat_rng = _rng(derive_seed("latents", image_ref, seed, self.channels))
        latents = lat_rng.standard_normal((structure.voxel_sum, self.channels)).astype(np.float32)
        latent = make_latent(structure.coords, latents, structure.resolution)
        return structure, latent


class MockFilterBackend(FilterBackend):
    """Scripted accept/reject sequence; repeats the last verdict forever."""

    def __init__(self, verdicts=(True,)):
        self.verdicts = [bool(v) for v in verdicts]
        self._calls = 0

    def judge(self, record: ManifestRecord) -> tuple[bool, str]:
        i = min(self._calls, len(self.verdicts) - 1)
        self._calls += 1
        ok = self.verdicts[i]
        return ok, "mock filter accepted" if ok else "mock filter rejected"


def mock_backend_suite(resolution: int = 32, channels: int = 8, verdicts=(True,)) -> BackendSuite:
    return BackendSuite(
        instruction=MockInstructionBackend(),
        image_editor=MockImageEditor(),
        generator=MockGeneratorBackend(resolution=resolution, channels=channels),
        quality_filter=MockFilterBackend(verdicts=verdicts),
    )


# --- orchestration ----------------------------------------------------------


@dataclass(frozen=True)
class SampleSpec:
    id: str
    image_ref: str
    seed: int


_STAGES = ("instruction", "generate_source", "image_edit", "generate_target",
           "voxel_merge", "slat_merge", "write_artifacts", "filter")


def run_sample(
    sample: SampleSpec,
    backends: BackendSuite,
    out_dir,
    merge_policy=None,
    connectivity: int = DEFAULT_CONNECTIVITY,
    max_attempts: int = 1,
) -> ManifestRecord:
    """Run the full editing chain for one sample, re-sampling on filter
    rejection up to ``max_attempts`` times."""
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    if merge_policy is None:
        merge_policy = Threshold()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    record = ManifestRecord(id=sample.id, status="failed", attempt=1)
    for attempt in range(1, max_attempts + 1):
        record = _run_attempt(sample, backends, out_dir, merge_policy, connectivity, attempt)
        if record.status != "filtered":
            break
    return record


def _run_attempt(sample, backends, out_dir, policy, connectivity, attempt) -> ManifestRecord:
    record = ManifestRecord(
        id=sample.id,
        status="failed",
        attempt=attempt,
        source_image=sample.image_ref,
        policy={**policy.describe(), "connectivity": connectivity},
    )
    stage = _STAGES[0]
    try:
        instruction = backends.instruction.propose(
            sample.image_ref, derive_seed(sample.seed, attempt, "instruction"))
        record.instruction = instruction

        stage = "generate_source"
        s_src, z_src = backends.generator.generate(
            sample.image_ref, derive_seed(sample.seed, attempt, "generate_source"))

        stage = "image_edit"
        edited_ref = backends.image_editor.edit(
            sample.image_ref, instruction, derive_seed(sample.seed, attempt, "image_edit"))
        record.edited_image = edited_ref

        stage = "generate_target"
        s_tgt, z_tgt = backends.generator.generate(
            edited_ref, derive_seed(sample.seed, attempt, "generate_target"))

        stage = "voxel_merge"
        diff = diff_xor(s_src, s_tgt)
        components = label_components(diff, connectivity)
        mask = select_components(components, policy)
        merged = apply_flip(s_src, mask)

        stage = "slat_merge"
        merged_slat = slat_merge(z_src, z_tgt, mask, merged)

        stage = "write_artifacts"
        paths = {
            "source_structure": f"{sample.id}.src.nvx",
            "edited_structure": f"{sample.id}.tgt.nvx",
            "merged_structure": f"{sample.id}.merged.nvx",
            "source_slat": f"{sample.id}.src_slat.nvx",
            "merged_slat": f"{sample.id}.merged_slat.nvx",
        }
        for name, payload in (
            ("source_structure", s_src),
            ("edited_structure", s_tgt),
            ("merged_structure", merged),
            ("source_slat", z_src),
            ("merged_slat", merged_slat),
        ):
            write_nvx(payload, out_dir / paths[name])
            setattr(record, name, paths[name])
        record.voxel_sum_src = s_src.voxel_sum
        record.voxel_sum_tgt = s_tgt.voxel_sum
        record.mask_component_sizes = components.sizes
        record.mask_selected_sizes = list(mask.selected_sizes)

        stage = "filter"
        accepted, reason = backends.quality_filter.judge(record)
        record.filter_reason = reason
        record.status = "ok" if accepted else "filtered"
    except Exception as exc:  # noqa: BLE001 - failures become records, not crashes
        record.status = "failed"
        record.error = f"{stage}: {type(exc).__name__}: {exc}"
    return record


def run_pipeline(
    out_dir,
    n_samples: int,
    backends: BackendSuite | None = None,
    merge_policy=None,
    connectivity: int = DEFAULT_CONNECTIVITY,
    seed: int = 0,
    max_attempts: int = 1,
    workers: int = 1,
    manifest_name: str = "manifest.jsonl",
    image_refs: list | None = None,
) -> Path:
    """Process ``n_samples`` independent samples and append their records,
    in sample order, to a fresh JSONL manifest.  Returns the manifest path.

    Worker threads only parallelize the per-sample stages; the manifest is
    written by this thread in index order, so output bytes do not depend
    on ``workers``.
    """
    if backends is None:
        backends = mock_backend_suite()
    if image_refs is not None and len(image_refs) < n_samples:
        raise ValueError(f"{len(image_refs)} image refs for {n_samples} samples")
    if Path(manifest_name).name != manifest_name:
        # record paths are relative to the manifest, so it must sit in out_dir
        raise ValueError(f"manifest name must be a bare filename, got {manifest_name!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / manifest_name
    manifest_path.write_text("", encoding="utf-8")

    specs = []
    for i in range(n_samples):
        ref = image_refs[i] if image_refs else f"mock-image://{seed}/{i:06d}"
        specs.append(SampleSpec(id=f"sample-{i:06d}", image_ref=ref, seed=derive_seed(seed, i)))

    def work(spec: SampleSpec) -> ManifestRecord:
        return run_sample(spec, backends, out_dir, merge_policy, connectivity, max_attempts)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, specs))
    else:
        results = [work(spec) for spec in specs]

    for record in results:
        append_record(manifest_path, record)
    return manifest_path
