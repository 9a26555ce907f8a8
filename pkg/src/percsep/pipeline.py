"""Pipeline stages: synthesise, diarize, identify, separate, score.

Each stage has an in-memory form (used by tests and by the directory stages)
and a directory form that reads its inputs from, and writes its artifacts to,
a working directory.  ``run_all`` simply chains the directory stages, so the
one-shot and stage-by-stage runs go through identical reads and writes.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp, gmm, ib, identify, metrics, separation, synth
from .audio import AudioBuffer, read_wav, write_wav
from .config import RunConfig
from .segmentation import (GHATAM, MRIDANGAM, OVERLAP, Annotation, Segment, read_rttm,
                           segment_by_strokes, segment_fixed, write_rttm)

log = logging.getLogger(__name__)

STAGE_OUTPUTS = {
    "synth": ("mixture.wav", "mridangam.wav", "ghatam.wav", "truth.rttm", "onsets.csv"),
    "diarize": ("hyp.rttm", "merge_log.csv"),
    "identify": ("id_models.json", "labeled.rttm"),
    "separate": ("mask_net.json", "proposed_mridangam.wav", "proposed_ghatam.wav",
                 "traditional_mridangam.wav", "traditional_ghatam.wav"),
}
PRODUCER = {name: stage for stage, names in STAGE_OUTPUTS.items() for name in names}


class MissingArtifact(FileNotFoundError):
    def __init__(self, stage: str, path: Path):
        producer = PRODUCER.get(path.name)
        hint = f" (run '{producer}' first)" if producer else ""
        super().__init__(f"{stage}: missing input {path}{hint}")
        self.stage = stage
        self.path = path


def _need(stage: str, path: Path) -> Path:
    if not path.is_file():
        raise MissingArtifact(stage, path)
    return path


# ---------------------------------------------------------------------------
# In-memory stages


def synthesize(cfg: RunConfig, seed: int | None = None) -> synth.SynthResult:
    spec = synth.SynthSpec(seed=cfg.seed if seed is None else seed, plan=cfg.plan,
                           sample_rate=cfg.sample_rate)
    return synth.generate(spec)


def features(audio: AudioBuffer, cfg: RunConfig) -> dsp.FeatureMatrix:
    return dsp.mfcc(audio, n_coeffs=cfg.n_mfcc, n_mels=cfg.n_mels)


def initial_segments(audio: AudioBuffer, cfg: RunConfig, mode: str | None = None) -> list[Segment]:
    mode = mode or cfg.mode
    if mode == "fixed":
        return segment_fixed(audio.duration, cfg.seg_len)
    if len(audio) <= cfg.fft_size:
        onsets = np.zeros(0)
    else:
        onsets = dsp.detect_onsets(audio, flux_hop=cfg.hop, threshold_k=cfg.onset_k, fft_size=cfg.fft_size)
    return segment_by_strokes(onsets, audio.duration, cfg.min_strokes)


@dataclass(frozen=True)
class Diarization:
    segments: list[Segment]
    state: ib.ClusterState
    annotation: Annotation


def diarize(audio: AudioBuffer, cfg: RunConfig, mode: str | None = None,
            feats: dsp.FeatureMatrix | None = None) -> Diarization:
    feats = features(audio, cfg) if feats is None else feats
    segments = initial_segments(audio, cfg, mode)
    # Segments too short to hold a frame centre are folded into their neighbour.
    kept: list[Segment] = []
    for s in segments:
        if feats.frames_in(s.start, s.end).any() or not kept:
            kept.append(s)
        else:
            kept[-1] = Segment(kept[-1].start, s.end)
    if not feats.frames_in(kept[0].start, kept[0].end).any() and len(kept) > 1:
        kept[1] = Segment(kept[0].start, kept[1].end)
        kept = kept[1:]
    k = min(cfg.background_components, feats.n_frames)
    background = gmm.fit_em(feats.values, k, max_iters=cfg.em_max_iters, seed=cfg.seed)
    table = ib.build_posterior_table(background, feats, kept)
    state = ib.agglomerate(table, ib.IBConfig(cfg.beta, cfg.nmi_threshold, cfg.max_clusters))
    ann = ib.realign(feats, state, kept, min_dur=cfg.min_duration, duration=audio.duration,
                     n_components=cfg.realign_components, switch_penalty=cfg.switch_penalty,
                     passes=cfg.realign_passes, seed=cfg.seed)
    return Diarization(kept, state, ann)


def train_identification(cfg: RunConfig) -> identify.IdentificationModels:
    """Fit the overlap and ghatam models on a separately seeded development recording."""
    dev = synthesize(cfg, cfg.dev_seed)
    return identify.train_models(features(dev.mixture, cfg), dev.truth, cfg.id_components,
                                 seed=cfg.dev_seed, max_iters=cfg.em_max_iters)


def label_clusters(audio: AudioBuffer, clusters: Annotation, models: identify.IdentificationModels,
                   cfg: RunConfig, feats: dsp.FeatureMatrix | None = None) -> Annotation:
    feats = features(audio, cfg) if feats is None else feats
    labels = identify.identify(clusters, feats, models, solo_only=cfg.solo_only)
    return identify.label_annotation(clusters, labels)


def overlap_pairs(result: synth.SynthResult) -> list[tuple[AudioBuffer, AudioBuffer, AudioBuffer]]:
    """(mixture, mridangam, ghatam) excerpts over every OVERLAP interval of the truth."""
    pairs = []
    for s in result.truth:
        if s.label == OVERLAP:
            pairs.append(tuple(x.slice(s.start, s.end) for x in (result.mixture, result.track_a, result.track_b)))
    return pairs


def train_separator(cfg: RunConfig) -> separation.MaskNetwork:
    dev = synthesize(cfg, cfg.dev_seed)
    pairs = overlap_pairs(dev)
    if not pairs:
        raise ValueError("the development plan has no OVERLAP section to train the separator on")
    net = separation.MaskNetwork.create(cfg.fft_size // 2 + 1, cfg.hidden, cfg.n_layers, cfg.hop,
                                        seed=cfg.dev_seed)
    tcfg = separation.TrainConfig(gamma=cfg.gamma, learning_rate=cfg.learning_rate, momentum=cfg.momentum,
                                  epochs=cfg.epochs, seed=cfg.dev_seed, sequence_len=cfg.sequence_len,
                                  clip_norm=cfg.clip_norm)
    return separation.train(net, pairs, tcfg,
                            lambda e, l: log.info("separator epoch %d loss %.5f", e, l)).net


def proposed_and_traditional(mixture: AudioBuffer, labeled: Annotation, net: separation.MaskNetwork,
                             cfg: RunConfig) -> tuple[separation.SeparationOutput, separation.SeparationOutput]:
    """Separate only the OVERLAP intervals (proposed) and the whole recording (traditional)."""
    proposed = separation.assemble_channels(mixture, labeled, net, crossfade=cfg.crossfade)
    traditional = separation.separate(net, mixture)
    return proposed, traditional


# ---------------------------------------------------------------------------
# Scoring


@dataclass(frozen=True)
class ScoreReport:
    der: metrics.DerBreakdown
    n_clusters: int
    purity: float
    accuracy: float
    overlap_gsdr: dict[str, dict[str, float]]   # system -> source -> dB
    solo_gsdr: dict[str, float]                 # system -> dB over solo regions (active voice)
    solo_exact: float                           # share of hypothesised-solo samples copied exactly

    def rows(self) -> list[tuple[str, str, str, float]]:
        out = [("diarization", "hyp", "der_percent", 100 * self.der.der),
               ("diarization", "hyp", "missed_s", self.der.missed),
               ("diarization", "hyp", "false_alarm_s", self.der.false_alarm),
               ("diarization", "hyp", "confusion_s", self.der.confusion),
               ("diarization", "hyp", "clusters", float(self.n_clusters)),
               ("identification", "hyp", "purity", self.purity),
               ("identification", "hyp", "accuracy_percent", self.accuracy)]
        for system, vals in self.overlap_gsdr.items():
            for src, v in vals.items():
                out.append(("gsdr_overlap", system, src, v))
        for system, v in self.solo_gsdr.items():
            out.append(("gsdr_solo", system, "active", v))
        out.append(("gsdr_solo", "proposed", "exact_copy_share", self.solo_exact))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["table", "system", "column", "value"])
        for row in self.rows():
            w.writerow([*row[:3], repr(float(row[3]))])
        return buf.getvalue()

    def format(self) -> str:
        d = self.der
        lines = [
            "Diarization",
            f"  {'DER %':>8} {'missed s':>9} {'FA s':>7} {'conf. s':>8} {'clusters':>8}",
            f"  {100 * d.der:8.2f} {d.missed:9.2f} {d.false_alarm:7.2f} {d.confusion:8.2f} {self.n_clusters:8d}",
            "",
            "Identification",
            f"  {'purity':>8} {'acc. %':>8}",
            f"  {self.purity:8.3f} {self.accuracy:8.2f}",
            "",
            "GSDR on overlapped regions (dB)",
            f"  {'system':<12} {'mridangam':>10} {'ghatam':>10}",
        ]
        for system, vals in self.overlap_gsdr.items():
            lines.append(f"  {system:<12} {vals.get(MRIDANGAM, float('nan')):10.3f} "
                         f"{vals.get(GHATAM, float('nan')):10.3f}")
        lines += ["", "GSDR on solo regions, active voice (dB)", f"  {'system':<12} {'GSDR':>10}"]
        for system, v in self.solo_gsdr.items():
            lines.append(f"  {system:<12} {v:10.3f}")
        gap = self.solo_gsdr.get("proposed", np.nan) - self.solo_gsdr.get("traditional", np.nan)
        lines.append(f"  proposed - traditional gap: {gap:.3f} dB; "
                     f"exact-copy share of hypothesised solo samples: {self.solo_exact:.4f}")
        return "\n".join(lines)


def solo_exact_share(mixture: AudioBuffer, labeled: Annotation, output: separation.SeparationOutput,
                     crossfade: float) -> float:
    """Share of samples in hypothesised solo intervals (outside crossfades) that equal the input."""
    sr = mixture.sample_rate
    margin = int(np.ceil(crossfade * sr / 2))
    total = same = 0
    for s in labeled.merged():
        if s.label not in (MRIDANGAM, GHATAM):
            continue
        i0 = int(round(s.start * sr)) + margin
        i1 = min(int(round(s.end * sr)), len(mixture)) - margin
        if i1 <= i0:
            continue
        active = output.mridangam if s.label == MRIDANGAM else output.ghatam
        other = output.ghatam if s.label == MRIDANGAM else output.mridangam
        ok = (active.samples[i0:i1] == mixture.samples[i0:i1]) & (other.samples[i0:i1] == 0.0)
        total += i1 - i0
        same += int(ok.sum())
    return same / total if total else 1.0


def _region_gsdr(truth: Annotation, labels: tuple[str, ...], refs: dict[str, AudioBuffer],
                 est: dict[str, AudioBuffer], sources: dict[str, tuple[str, ...]]) -> dict[str, float]:
    items = []
    for s in truth:
        if s.label not in labels:
            continue
        pairs = {}
        for name in sources[s.label]:
            ref = refs[name].slice(s.start, s.end)
            if np.any(ref.samples):
                pairs[name] = (est[name].slice(s.start, s.end), ref)
        if pairs:
            items.append((s.duration, pairs))
    if not items:
        return {}
    return metrics.sdr_report(items).global_sdr


def score(truth: Annotation, hyp: Annotation, labeled: Annotation, mixture: AudioBuffer,
          refs: dict[str, AudioBuffer], systems: dict[str, separation.SeparationOutput],
          cfg: RunConfig) -> ScoreReport:
    d = metrics.der(truth, hyp, cfg.collar)
    est = {system: {MRIDANGAM: out.mridangam, GHATAM: out.ghatam} for system, out in systems.items()}
    overlap = {system: _region_gsdr(truth, (OVERLAP,), refs, e, {OVERLAP: (MRIDANGAM, GHATAM)})
               for system, e in est.items()}
    solo_src = {MRIDANGAM: (MRIDANGAM,), GHATAM: (GHATAM,)}
    solo = {}
    for system, e in est.items():
        # Pool both voices: every solo interval contributes its active voice only.
        items = []
        for s in truth:
            if s.label in solo_src:
                ref = refs[s.label].slice(s.start, s.end)
                if np.any(ref.samples):
                    items.append((e[s.label].slice(s.start, s.end), ref, s.duration))
        if items:
            solo[system] = metrics.global_sdr(items)
    exact = solo_exact_share(mixture, labeled, systems["proposed"], cfg.crossfade) if "proposed" in systems else 1.0
    return ScoreReport(d, len(hyp.labels), metrics.purity(truth, hyp), metrics.accuracy(truth, labeled),
                       {k: v for k, v in overlap.items() if v}, solo, exact)


def thresholds_met(report: ScoreReport, cfg: RunConfig) -> list[str]:
    failures = []
    if cfg.max_der is not None and 100 * report.der.der > cfg.max_der:
        failures.append(f"DER {100 * report.der.der:.2f}% exceeds {cfg.max_der}%")
    if cfg.min_accuracy is not None and report.accuracy < cfg.min_accuracy:
        failures.append(f"accuracy {report.accuracy:.2f}% below {cfg.min_accuracy}%")
    return failures


# ---------------------------------------------------------------------------
# Directory stages


def _mixture_path(out: Path, mixture: str | Path | None) -> Path:
    return Path(mixture) if mixture is not None else out / "mixture.wav"


def _read_audio(stage: str, path: Path) -> AudioBuffer:
    return read_wav(_need(stage, path))


def stage_synth(cfg: RunConfig, out: str | Path) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    r = synthesize(cfg)
    paths = [out / name for name in STAGE_OUTPUTS["synth"]]
    write_wav(paths[0], r.mixture, "pcm16")
    write_wav(paths[1], r.track_a, "pcm16")
    write_wav(paths[2], r.track_b, "pcm16")
    write_rttm(paths[3], r.truth, "synth")
    with open(paths[4], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["voice", "time"])
        rows = [(t, MRIDANGAM) for t in r.onsets_a] + [(t, GHATAM) for t in r.onsets_b]
        for t, voice in sorted(rows):
            w.writerow([voice, f"{t:.6f}"])
    return paths


def stage_diarize(cfg: RunConfig, out: str | Path, mixture: str | Path | None = None) -> list[Path]:
    out = Path(out)
    audio = _read_audio("diarize", _mixture_path(out, mixture))
    result = diarize(audio, cfg)
    log.info("diarize: %d segments -> %d clusters", len(result.segments), result.state.n_clusters)
    paths = [out / name for name in STAGE_OUTPUTS["diarize"]]
    write_rttm(paths[0], result.annotation, "hyp")
    ib.write_merge_log(paths[1], result.state)
    return paths


def stage_identify(cfg: RunConfig, out: str | Path, mixture: str | Path | None = None,
                   models: str | Path | None = None) -> list[Path]:
    out = Path(out)
    audio = _read_audio("identify", _mixture_path(out, mixture))
    clusters = read_rttm(_need("identify", out / "hyp.rttm"))
    model_path = out / "id_models.json"
    if models is not None:
        id_models = identify.IdentificationModels.load(_need("identify", Path(models)))
    else:
        id_models = train_identification(cfg)
    id_models.save(model_path)
    labeled_path = out / "labeled.rttm"
    write_rttm(labeled_path, label_clusters(audio, clusters, id_models, cfg), "labeled")
    return [model_path, labeled_path]


def stage_separate(cfg: RunConfig, out: str | Path, mixture: str | Path | None = None,
                   net: str | Path | None = None) -> list[Path]:
    out = Path(out)
    audio = _read_audio("separate", _mixture_path(out, mixture))
    labeled = read_rttm(_need("separate", out / "labeled.rttm"))
    model = (separation.MaskNetwork.load(_need("separate", Path(net))) if net is not None
             else train_separator(cfg))
    paths = [out / name for name in STAGE_OUTPUTS["separate"]]
    model.save(paths[0])
    proposed, traditional = proposed_and_traditional(audio, labeled, model, cfg)
    for path, buf in zip(paths[1:], (proposed.mridangam, proposed.ghatam,
                                     traditional.mridangam, traditional.ghatam)):
        write_wav(path, buf, "float32")
    return paths


def stage_score(cfg: RunConfig, out: str | Path, emit_csv: str | Path | None = None) -> ScoreReport:
    out = Path(out)
    need = lambda name: _need("score", out / name)  # noqa: E731
    truth, hyp, labeled = (read_rttm(need(n)) for n in ("truth.rttm", "hyp.rttm", "labeled.rttm"))
    mixture = read_wav(need("mixture.wav"))
    refs = {MRIDANGAM: read_wav(need("mridangam.wav")), GHATAM: read_wav(need("ghatam.wav"))}
    systems = {}
    for system in ("proposed", "traditional"):
        systems[system] = separation.SeparationOutput(read_wav(need(f"{system}_mridangam.wav")),
                                                      read_wav(need(f"{system}_ghatam.wav")))
    net = separation.MaskNetwork.load(need("mask_net.json"))
    # Oracle: separation restricted to the true overlap boundaries.
    oracle = separation.assemble_channels(mixture, truth, net, crossfade=cfg.crossfade)
    systems = {"proposed": systems["proposed"], "oracle": oracle, "traditional": systems["traditional"]}
    report = score(truth, hyp, labeled, mixture, refs, systems, cfg)
    if emit_csv is not None:
        Path(emit_csv).write_text(report.to_csv())
    return report


def run_all(cfg: RunConfig, out: str | Path, emit_csv: str | Path | None = None) -> ScoreReport:
    stage_synth(cfg, out)
    stage_diarize(cfg, out)
    stage_identify(cfg, out)
    stage_separate(cfg, out)
    return stage_score(cfg, out, emit_csv)
