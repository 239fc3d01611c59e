"""Command-line pipeline: every stage reads and writes files under one output
directory, and each output gets a ``.meta.json`` provenance sidecar.

Typical run (see ``configs/cipher.json``)::

    xlqa --config configs/cipher.json build-vocab
    xlqa --config configs/cipher.json align-corpus
    xlqa --config configs/cipher.json align-finetune
    xlqa --config configs/cipher.json augment
    xlqa --config configs/cipher.json task-tune --init raw
    xlqa --config configs/cipher.json task-tune --init aligned --augmented
    ...
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import aligner, alignft, corpus, evalsig, qatask, synth
from .encoder import EncoderConfig, init_params, load_params, save_params
from .errors import ValidationError, XlqaError

logger = logging.getLogger("xlqa")

AUTO_IBM1 = "auto-ibm1"
RAW, ALIGNED = "raw", "aligned"


class MissingArtifactError(XlqaError):
    pass


class ConfigError(ValidationError):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclasses.dataclass(frozen=True)
class CorpusEntry:
    source: str
    target: str
    source_lang: str
    target_lang: str
    alignments: str = AUTO_IBM1


_SECTION_DEFAULTS = {
    "encoder": {"hidden_dim": 32, "num_layers": 2, "num_heads": 4, "ffn_dim": 64, "max_seq_len": 64},
    "vocab": {"merges": 200},
    "ibm1": {"iterations": 10, "use_null": True, "symmetric": False},
    "qa": {"max_len": None, "max_span_subwords": 30},
    "datasets": {"train": None, "test": None, "translations": None},
}
_SECTION_TYPES = {
    "encoder": {"hidden_dim": int, "num_layers": int, "num_heads": int, "ffn_dim": int, "max_seq_len": int},
    "vocab": {"merges": int},
    "ibm1": {"iterations": int, "use_null": bool, "symmetric": bool},
    "qa": {"max_len": (int, type(None)), "max_span_subwords": int},
    "datasets": {"train": (str, type(None)), "test": (str, type(None)), "translations": (str, type(None))},
}
_TOP_LEVEL = {"seed", "output_dir", "manifest", "align_train", "task_tune", *_SECTION_DEFAULTS}


def _fail(field, msg):
    raise ConfigError(f"config field {field!r}: {msg}")


def _section(raw, name):
    value = raw.get(name, {})
    if not isinstance(value, dict):
        _fail(name, "must be an object")
    out = dict(_SECTION_DEFAULTS[name])
    for key, v in value.items():
        if key not in out:
            _fail(f"{name}.{key}", "unknown field")
        want = _SECTION_TYPES[name][key]
        if not isinstance(v, want) or (isinstance(v, bool) and want is int):
            _fail(f"{name}.{key}", f"bad value {v!r}")
        out[key] = v
    return out


def _dataclass_section(raw, name, cls, seed):
    value = raw.get(name, {})
    if not isinstance(value, dict):
        _fail(name, "must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in value:
        if key not in known or key == "seed":
            _fail(f"{name}.{key}", "unknown field" if key != "seed" else "seeds are set by the top-level 'seed'")
    try:
        return cls(**value, seed=seed)
    except (TypeError, ValueError) as exc:
        _fail(name, str(exc))


@dataclasses.dataclass
class PipelineConfig:
    seed: int = 0
    output_dir: str = "xlqa-out"
    encoder: dict = dataclasses.field(default_factory=lambda: dict(_SECTION_DEFAULTS["encoder"]))
    vocab: dict = dataclasses.field(default_factory=lambda: dict(_SECTION_DEFAULTS["vocab"]))
    ibm1: dict = dataclasses.field(default_factory=lambda: dict(_SECTION_DEFAULTS["ibm1"]))
    qa: dict = dataclasses.field(default_factory=lambda: dict(_SECTION_DEFAULTS["qa"]))
    datasets: dict = dataclasses.field(default_factory=lambda: dict(_SECTION_DEFAULTS["datasets"]))
    align_train: alignft.AlignTrainConfig = dataclasses.field(default_factory=alignft.AlignTrainConfig)
    task_tune: qatask.TaskTuneConfig = dataclasses.field(default_factory=qatask.TaskTuneConfig)
    manifest: tuple = ()
    base_dir: Path = Path(".")

    @classmethod
    def from_json(cls, raw, base_dir=".", seed=None, out=None) -> "PipelineConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        for key in raw:
            if key not in _TOP_LEVEL:
                _fail(key, "unknown field")
        master = raw.get("seed", 0) if seed is None else seed
        if not isinstance(master, int) or isinstance(master, bool) or master < 0:
            _fail("seed", "must be a non-negative integer")
        output_dir = raw.get("output_dir", "xlqa-out")
        if not isinstance(output_dir, str):
            _fail("output_dir", "must be a string")
        # --out is taken relative to the working directory, output_dir to the config file
        output_dir = out if out is not None else str(Path(base_dir) / output_dir)
        entries = raw.get("manifest", [])
        if not isinstance(entries, list):
            _fail("manifest", "must be a list")
        manifest = []
        for i, e in enumerate(entries):
            if not isinstance(e, dict):
                _fail(f"manifest[{i}]", "must be an object")
            try:
                manifest.append(CorpusEntry(**e))
            except TypeError as exc:
                _fail(f"manifest[{i}]", str(exc))
        cfg = cls(
            seed=master,
            output_dir=output_dir,
            encoder=_section(raw, "encoder"),
            vocab=_section(raw, "vocab"),
            ibm1=_section(raw, "ibm1"),
            qa=_section(raw, "qa"),
            datasets=_section(raw, "datasets"),
            align_train=_dataclass_section(raw, "align_train", alignft.AlignTrainConfig, master),
            task_tune=_dataclass_section(raw, "task_tune", qatask.TaskTuneConfig, master),
            manifest=tuple(manifest),
            base_dir=Path(base_dir),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, seed=None, out=None) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
        return cls.from_json(raw, path.parent, seed, out)

    def validate(self):
        try:
            EncoderConfig(vocab_size=300, **self.encoder)
        except ValueError as exc:
            _fail("encoder", str(exc))
        for i, e in enumerate(self.manifest):
            for name in ("source", "target"):
                if not self.resolve(getattr(e, name)).is_file():
                    _fail(f"manifest[{i}].{name}", f"file {getattr(e, name)!r} not found")
            if e.alignments != AUTO_IBM1 and not self.resolve(e.alignments).is_file():
                _fail(f"manifest[{i}].alignments", f"expected a Pharaoh file or {AUTO_IBM1!r}, got {e.alignments!r}")
        for name, p in self.datasets.items():
            if p is not None and not self.resolve(p).is_file():
                _fail(f"datasets.{name}", f"file {p!r} not found")

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def to_json(self) -> dict:
        def plain(dc):
            d = dataclasses.asdict(dc)
            d.pop("seed", None)
            return d

        return {
            "seed": self.seed,
            "encoder": self.encoder,
            "vocab": self.vocab,
            "ibm1": self.ibm1,
            "qa": self.qa,
            "datasets": self.datasets,
            "align_train": plain(self.align_train),
            "task_tune": plain(self.task_tune),
            "manifest": [dataclasses.asdict(e) for e in self.manifest],
        }

    def digest(self) -> str:
        # output_dir is left out so runs into different directories compare equal
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode("utf-8")).hexdigest()

    def encoder_config(self, vocab_size) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size, seed=self.seed, **self.encoder)


# --------------------------------------------------------------------------
# artifacts


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _label(cfg, path) -> str:
    path = Path(path)
    for root, tag in ((cfg.out, "$out"), (cfg.base_dir, "$config")):
        try:
            return f"{tag}/{path.resolve().relative_to(root.resolve()).as_posix()}"
        except ValueError:
            continue
    return path.as_posix()


def write_meta(cfg, command, output, inputs=(), results=None):
    """Write ``<output>.meta.json``: config hash, seed, input and output digests."""
    record = {
        "command": command,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "inputs": {_label(cfg, p): _sha256(p) for p in inputs},
        "output_sha256": _sha256(output),
    }
    if results is not None:
        record["results"] = results
    Path(str(output) + ".meta.json").write_text(evalsig.dumps(record), encoding="utf-8")


def _prepare(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def require(path, producer) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"missing {path}; run `xlqa {producer}` first")
    return path


def vocab_path(cfg):
    return cfg.out / "vocab.json"


def alignment_path(cfg, i, entry):
    return cfg.out / "align" / f"{i}.{entry.source_lang}-{entry.target_lang}.pharaoh"


def aligned_encoder_path(cfg):
    return cfg.out / "encoder.aligned.ckpt"


def augmented_path(cfg):
    return cfg.out / "train.aug.jsonl"


def model_path(cfg, name):
    return cfg.out / "models" / f"{name}.ckpt"


def predictions_path(cfg, name):
    return cfg.out / "preds" / f"{name}.jsonl"


def report_path(cfg, name):
    return cfg.out / "reports" / f"{name}.json"


def _dataset(cfg, name, override=None) -> Path:
    p = override if override is not None else cfg.datasets.get(name)
    if p is None:
        raise ConfigError(f"config field 'datasets.{name}': not set (or pass --{name})")
    p = cfg.resolve(p) if override is None else Path(p)
    if not p.is_file():
        raise ConfigError(f"dataset {p} not found")
    return p


def _load_vocab(cfg):
    return corpus.Vocabulary.load(require(vocab_path(cfg), "build-vocab"))


def _check_name(name):
    if not name or any(c in name for c in "/\\") or name.startswith("."):
        raise ValidationError(f"bad model name {name!r}")
    return name


# --------------------------------------------------------------------------
# commands


def cmd_build_vocab(cfg, args):
    merges = args.merges if args.merges is not None else cfg.vocab["merges"]
    inputs, bitexts, texts = [], [], []
    for e in cfg.manifest:
        src, tgt = cfg.resolve(e.source), cfg.resolve(e.target)
        bitexts.append(corpus.load_parallel(src, tgt, e.source_lang, e.target_lang))
        inputs += [src, tgt]
    if cfg.datasets["train"]:
        p = cfg.resolve(cfg.datasets["train"])
        for ex in corpus.load_qa_dataset(p):
            texts += [ex.question, ex.context]
        inputs.append(p)
    if cfg.datasets["translations"]:
        p = cfg.resolve(cfg.datasets["translations"])
        texts += [q for items in corpus.load_translations(p).values() for q, _ in items]
        inputs.append(p)
    if not bitexts and not texts:
        raise ConfigError("config field 'manifest': nothing to build a vocabulary from")
    vocab = corpus.build_vocab(bitexts, merges, extra_texts=texts)
    out = _prepare(vocab_path(cfg))
    vocab.save(out)
    write_meta(cfg, "build-vocab", out, inputs, {"size": len(vocab), "merges": len(vocab.merges)})
    print(f"vocabulary of {len(vocab)} ids -> {out}")
    return 0


def cmd_align_corpus(cfg, args):
    iterations = args.iterations if args.iterations is not None else cfg.ibm1["iterations"]
    symmetric = args.symmetric or cfg.ibm1["symmetric"]
    done = 0
    for i, e in enumerate(cfg.manifest):
        if e.alignments != AUTO_IBM1:
            continue
        src, tgt = cfg.resolve(e.source), cfg.resolve(e.target)
        bitext = corpus.load_parallel(src, tgt, e.source_lang, e.target_lang)
        sets = aligner.align_corpus(bitext, iterations, cfg.ibm1["use_null"], symmetric)
        out = _prepare(alignment_path(cfg, i, e))
        aligner.write_pharaoh(sets, out)
        write_meta(cfg, "align-corpus", out, [src, tgt],
                   {"iterations": iterations, "symmetric": symmetric, "links": sum(len(a) for a in sets)})
        print(f"{len(sets)} alignment lines -> {out}")
        done += 1
    if not done:
        print(f"no manifest entry asks for {AUTO_IBM1!r}; nothing to do")
    return 0


def _aligned_corpora(cfg, vocab):
    aligned, inputs = [], []
    for i, e in enumerate(cfg.manifest):
        src, tgt = cfg.resolve(e.source), cfg.resolve(e.target)
        bitext = corpus.load_parallel(src, tgt, e.source_lang, e.target_lang, vocab)
        if e.alignments == AUTO_IBM1:
            apath = require(alignment_path(cfg, i, e), "align-corpus")
        else:
            apath = cfg.resolve(e.alignments)
        sets = aligner.read_pharaoh(apath)
        aligned.append(alignft.AlignedCorpus(bitext, tuple(sets)))
        inputs += [src, tgt, apath]
    if not aligned:
        raise ConfigError("config field 'manifest': alignment fine-tuning needs at least one corpus")
    return aligned, inputs


def cmd_align_finetune(cfg, args):
    vocab = _load_vocab(cfg)
    aligned, inputs = _aligned_corpora(cfg, vocab)
    params = init_params(cfg.encoder_config(len(vocab)))
    tuned, trace, frozen = alignft.train_alignment(params, aligned, cfg.align_train)
    layer = cfg.align_train.align_layer
    before = alignft.pair_distance_report(frozen, frozen, aligned, layer, cfg.seed)
    after = alignft.pair_distance_report(tuned, frozen, aligned, layer, cfg.seed)
    out = _prepare(aligned_encoder_path(cfg))
    save_params(tuned, out, {"trace": trace})
    results = {
        "trace": trace,
        "aligned_distance_before": before.aligned_distance,
        "aligned_distance_after": after.aligned_distance,
        "random_distance_after": after.random_distance,
        "drift": after.drift,
    }
    write_meta(cfg, "align-finetune", out, [vocab_path(cfg)] + inputs, results)
    def fmt(v):
        return "n/a" if v is None else f"{v:.4f}"

    print(f"aligned distance {fmt(before.aligned_distance)} -> {fmt(after.aligned_distance)} "
          f"(random pairs {fmt(after.random_distance)}) -> {out}")
    return 0


def cmd_augment(cfg, args):
    src = _dataset(cfg, "train", args.input)
    trans = _dataset(cfg, "translations", args.translations)
    examples = corpus.load_qa_dataset(src)
    augmented = corpus.augment_crosslingual(examples, corpus.load_translations(trans))
    out = _prepare(args.output or augmented_path(cfg))
    corpus.write_qa_dataset(augmented, out)
    write_meta(cfg, "augment", out, [src, trans], {"input": len(examples), "output": len(augmented)})
    print(f"{len(examples)} -> {len(augmented)} examples -> {out}")
    return 0


def cmd_task_tune(cfg, args):
    vocab = _load_vocab(cfg)
    inputs = [vocab_path(cfg)]
    if args.init == ALIGNED:
        enc_path = require(aligned_encoder_path(cfg), "align-finetune")
        encoder, _ = load_params(enc_path)
        inputs.append(enc_path)
    else:
        encoder = init_params(cfg.encoder_config(len(vocab)))
    if args.train is not None:
        train_path = Path(args.train)
    elif args.augmented:
        train_path = require(augmented_path(cfg), "augment")
    else:
        train_path = _dataset(cfg, "train")
    examples = corpus.load_qa_dataset(train_path)
    inputs.append(train_path)
    name = _check_name(args.name or (args.init + ("-aug" if args.augmented else "")))
    model = qatask.QAModel.from_encoder(encoder, vocab, cfg.seed, cfg.qa["max_len"], cfg.qa["max_span_subwords"])
    model, trace = qatask.task_tune(model, examples, cfg.task_tune)
    out = _prepare(model_path(cfg, name))
    model.save(out, {"init": args.init, "trace": trace})
    write_meta(cfg, "task-tune", out, inputs, {"init": args.init, "examples": len(examples), "trace": trace})
    print(f"task-tuned {name!r} on {len(examples)} examples, final loss {trace[-1]:.4f} -> {out}")
    return 0


def cmd_predict(cfg, args):
    name = _check_name(args.model)
    mpath = require(model_path(cfg, name), f"task-tune --name {name}")
    test = _dataset(cfg, "test", args.test)
    model = qatask.QAModel.load(mpath)
    preds = qatask.predict(model, corpus.load_qa_dataset(test))
    out = _prepare(predictions_path(cfg, name))
    qatask.write_predictions(preds, out)
    write_meta(cfg, "predict", out, [mpath, test])
    print(f"{len(preds)} predictions -> {out}")
    return 0


def _load_preds(cfg, name):
    return qatask.read_predictions(require(predictions_path(cfg, _check_name(name)), f"predict --model {name}"))


def cmd_evaluate(cfg, args):
    test = _dataset(cfg, "test", args.test)
    preds = _load_preds(cfg, args.model)
    report = evalsig.evaluate(preds, corpus.load_qa_dataset(test), args.model)
    out = _prepare(report_path(cfg, args.model))
    out.write_text(evalsig.dumps(report.to_json()), encoding="utf-8")
    write_meta(cfg, "evaluate", out, [predictions_path(cfg, args.model), test])
    sys.stdout.write(evalsig.render_report(report))
    return 0


def cmd_significance(cfg, args):
    test = _dataset(cfg, "test", args.test)
    golds = corpus.load_qa_dataset(test)
    a, b = _load_preds(cfg, args.a), _load_preds(cfg, args.b)
    res = evalsig.bootstrap_significance(a, b, golds, args.metric, args.resamples, cfg.seed)
    out = _prepare(cfg.out / "significance" / f"{args.a}_vs_{args.b}.{args.metric}.json")
    out.write_text(evalsig.dumps({"a": args.a, "b": args.b, **res.to_json()}), encoding="utf-8")
    write_meta(cfg, "significance", out, [predictions_path(cfg, args.a), predictions_path(cfg, args.b), test])
    print(f"{args.metric} F1 {args.a}={100 * res.score_a:.1f} {args.b}={100 * res.score_b:.1f} "
          f"p={res.p_value:.4f} (A better in {res.win_fraction:.3f} of {res.resamples} resamples)")
    return 0


def cmd_crosstab(cfg, args):
    test = _dataset(cfg, "test", args.test)
    golds = corpus.load_qa_dataset(test)
    tab = evalsig.crosstab_correctness(_load_preds(cfg, args.a), _load_preds(cfg, args.b), golds)
    out = _prepare(cfg.out / "crosstab" / f"{args.a}_vs_{args.b}.json")
    out.write_text(evalsig.dumps({"x": args.a, "y": args.b, **tab.to_json()}), encoding="utf-8")
    write_meta(cfg, "crosstab", out, [predictions_path(cfg, args.a), predictions_path(cfg, args.b), test])
    sys.stdout.write(tab.render(args.a, args.b))
    return 0


def cmd_gradcheck(cfg, args):
    worst, report = alignft.objective_gradcheck(cfg.encoder, seed=cfg.seed,
                                                align_layer=cfg.align_train.align_layer)
    out = _prepare(cfg.out / "gradcheck.json")
    out.write_text(evalsig.dumps({"max_relative_error": worst, "per_tensor": report,
                                  "tolerance": args.tolerance}), encoding="utf-8")
    write_meta(cfg, "gradcheck", out)
    ok = worst < args.tolerance
    print(f"max relative error: {worst:.3e} ({'ok' if ok else 'FAILED'}, tolerance {args.tolerance:g})")
    return 0 if ok else 1


def cmd_report(cfg, args):
    names = args.models or sorted(p.stem for p in (cfg.out / "reports").glob("*.json"))
    if not names:
        raise MissingArtifactError(f"no reports under {cfg.out / 'reports'}; run `xlqa evaluate` first")
    paths = [require(report_path(cfg, _check_name(n)), f"evaluate --model {n}") for n in names]
    reports = [evalsig.EvalReport.from_json(json.loads(p.read_text(encoding="utf-8"))) for p in paths]
    inputs = list(paths)
    if args.mark_against:
        test = _dataset(cfg, "test", args.test)
        golds = corpus.load_qa_dataset(test)
        reference = _load_preds(cfg, args.mark_against)
        inputs += [test, predictions_path(cfg, args.mark_against)]
        for name, rep in zip(names, reports):
            if name != args.mark_against:
                evalsig.annotate_significance(rep, _load_preds(cfg, name), reference, golds,
                                              args.resamples, cfg.seed, args.alpha)
                inputs.append(predictions_path(cfg, name))
    text = evalsig.render_report(reports, args.format)
    out = _prepare(cfg.out / ("report.md" if args.format in ("md", "markdown") else "report.tsv"))
    out.write_text(text, encoding="utf-8")
    write_meta(cfg, "report", out, inputs)
    sys.stdout.write(text)
    return 0


def cmd_make_fixture(cfg, args):
    """Write the synthetic cipher-language bitext, QA splits and a config."""
    target = Path(args.dir)
    target.mkdir(parents=True, exist_ok=True)
    world = synth.toy_world(args.seed)
    train = synth.toy_qa(args.n_train, seed=args.seed + 1, world=world, id_prefix="tr")
    test_mono = synth.toy_qa(args.n_test, seed=args.seed + 2, world=world, id_prefix="te")
    test = test_mono + synth.crosslingual_test_set(test_mono)
    bitext, _ = synth.cipher_bitext(args.n_pairs, seed=args.seed + 3, lexicon=synth.world_lexicon(world))
    files = {
        "bitext.src": "".join(s.raw_text + "\n" for s, _ in bitext.pairs),
        "bitext.cip": "".join(t.raw_text + "\n" for _, t in bitext.pairs),
        "train.jsonl": corpus.dumps_jsonl(ex.to_json() for ex in train),
        "test.jsonl": corpus.dumps_jsonl(ex.to_json() for ex in test),
        "translations.jsonl": corpus.dumps_jsonl(
            {"id": i, "lang": lang, "question": q}
            for i, items in synth.toy_translations(train).items() for q, lang in items),
    }
    config = {
        "seed": args.seed,
        "output_dir": "out",
        "encoder": {"hidden_dim": 32, "num_layers": 2, "num_heads": 4, "ffn_dim": 64, "max_seq_len": 40},
        "vocab": {"merges": 200},
        "ibm1": {"iterations": 10, "use_null": True, "symmetric": False},
        "align_train": {"epochs": 5, "learning_rate": 0.001, "batch_size": 16, "clip_norm": 10.0},
        "task_tune": {"epochs": 8, "learning_rate": 0.002, "batch_size": 8},
        "manifest": [{"source": "bitext.src", "target": "bitext.cip", "source_lang": "src",
                      "target_lang": "cip", "alignments": AUTO_IBM1}],
        "datasets": {"train": "train.jsonl", "test": "test.jsonl", "translations": "translations.jsonl"},
    }
    files["config.json"] = json.dumps(config, indent=1) + "\n"
    for name, text in files.items():
        (target / name).write_text(text, encoding="utf-8")
    print(f"fixture ({len(train)} train / {len(test)} test / {len(bitext.pairs)} bitext pairs) -> {target}")
    return 0


def cmd_pipeline(cfg, args):
    """Baseline vs aligned+augmented, end to end."""
    ns = argparse.Namespace
    steps = [
        (cmd_build_vocab, ns(merges=None)),
        (cmd_align_corpus, ns(iterations=None, symmetric=False)),
        (cmd_align_finetune, ns()),
        (cmd_augment, ns(input=None, translations=None, output=None)),
        (cmd_task_tune, ns(init=RAW, augmented=False, train=None, name="baseline")),
        (cmd_task_tune, ns(init=ALIGNED, augmented=True, train=None, name="aligned-aug")),
    ]
    for name in ("baseline", "aligned-aug"):
        steps += [(cmd_predict, ns(model=name, test=None)), (cmd_evaluate, ns(model=name, test=None))]
    for metric in (evalsig.PASSAGE, evalsig.MINIMAL):
        steps.append((cmd_significance, ns(a="aligned-aug", b="baseline", metric=metric,
                                           resamples=args.resamples, test=None)))
    steps += [
        (cmd_crosstab, ns(a="aligned-aug", b="baseline", test=None)),
        (cmd_report, ns(models=["baseline", "aligned-aug"], format=args.format, mark_against="baseline",
                        alpha=0.05, resamples=args.resamples, test=None)),
    ]
    for fn, a in steps:
        status = fn(cfg, a)
        if status:
            return status
    return 0


# --------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="xlqa", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="pipeline config (JSON); defaults to the built-in toy config")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="learn the byte-level BPE vocabulary")
    p.add_argument("--merges", type=int)
    p.set_defaults(fn=cmd_build_vocab)

    p = sub.add_parser("align-corpus", help="IBM Model 1 alignments for 'auto-ibm1' manifest entries")
    p.add_argument("--iterations", type=int)
    p.add_argument("--symmetric", action="store_true", help="intersect both directions")
    p.set_defaults(fn=cmd_align_corpus)

    p = sub.add_parser("align-finetune", help="alignment fine-tuning of a fresh encoder")
    p.set_defaults(fn=cmd_align_finetune)

    p = sub.add_parser("augment", help="add translated-question copies of the training set")
    p.add_argument("--input")
    p.add_argument("--translations")
    p.add_argument("--output")
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("task-tune", help="train the QA model")
    p.add_argument("--init", choices=(RAW, ALIGNED), default=RAW)
    p.add_argument("--augmented", action="store_true", help="train on the output of `augment`")
    p.add_argument("--train", help="explicit training set path")
    p.add_argument("--name", help="model name (default: <init>[-aug])")
    p.set_defaults(fn=cmd_task_tune)

    p = sub.add_parser("predict", help="predict on the test set")
    p.add_argument("--model", required=True)
    p.add_argument("--test")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("evaluate", help="per language-pair F1 report")
    p.add_argument("--model", required=True)
    p.add_argument("--test")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("significance", help="paired bootstrap: is A better than B?")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--metric", choices=(evalsig.PASSAGE, evalsig.MINIMAL), default=evalsig.PASSAGE)
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--test")
    p.set_defaults(fn=cmd_significance)

    p = sub.add_parser("crosstab", help="fully correct / fully wrong counts of two systems")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--test")
    p.set_defaults(fn=cmd_crosstab)

    p = sub.add_parser("gradcheck", help="finite-difference check of the alignment objective")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("report", help="render stored reports as one table")
    p.add_argument("--models", nargs="*")
    p.add_argument("--format", choices=("tsv", "markdown"), default="tsv")
    p.add_argument("--mark-against", metavar="MODEL", help="star cells significantly better than MODEL")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--test")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("make-fixture", help="write the synthetic cipher-language fixture")
    p.add_argument("dir")
    p.add_argument("--n-train", type=int, default=300)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--n-pairs", type=int, default=500)
    p.set_defaults(fn=cmd_make_fixture, standalone=True)

    p = sub.add_parser("pipeline", help="run every stage: baseline vs aligned+augmented")
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--format", choices=("tsv", "markdown"), default="tsv")
    p.set_defaults(fn=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "standalone", False):
            args.seed = 0 if args.seed is None else args.seed
            return args.fn(None, args)
        if args.config:
            cfg = PipelineConfig.load(args.config, args.seed, args.out)
        else:
            cfg = PipelineConfig.from_json({}, ".", args.seed, args.out)
        return args.fn(cfg, args)
    except (XlqaError, OSError, ValueError) as exc:
        print(f"xlqa {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
