"""Single entry point exposing the full pipeline as subcommands.

Every artifact-producing command writes one run manifest next to its
primary output recording the command, parameter digest, input digests,
and output paths. Exit codes: 0 success, 2 input/validation error,
3 external-service error.
"""

from __future__ import annotations

import functools
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import click

from . import baselines, corpus, metrics, perspective, probes
from .errors import ExternalServiceError, ValidationError

MANIFEST_SUFFIX = ".manifest.json"
RUN_MANIFEST_NAME = "run_manifest.json"


def _handled(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(2)
        except ExternalServiceError as exc:
            click.echo(f"external service error: {exc}", err=True)
            raise SystemExit(3)
    return wrapper


def _digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _digest_path(path: Path) -> str:
    if path.is_dir():
        digest = hashlib.sha256()
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(str(child.relative_to(path)).encode("utf-8"))
            digest.update(child.read_bytes())
        return digest.hexdigest()
    return _digest_bytes(path.read_bytes())


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_manifest(primary: Path, command: str, params: dict,
                    inputs: list[Path], outputs: list[Path],
                    started_at: str) -> Path:
    canonical = json.dumps(params, sort_keys=True, separators=(",", ":"),
                           default=str)
    manifest = {
        "command": command,
        "params": json.loads(canonical),
        "config_digest": _digest_bytes(canonical.encode("utf-8")),
        "input_digests": {
            str(p): _digest_path(Path(p)) for p in inputs if Path(p).exists()
        },
        "outputs": [str(p) for p in outputs],
        "started_at": started_at,
        "finished_at": _now(),
    }
    primary = Path(primary)
    path = (primary / RUN_MANIFEST_NAME if primary.is_dir()
            else Path(str(primary) + MANIFEST_SUFFIX))
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    return path


def _load_texts_file(path: str) -> list[str]:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"texts file not found: {p}")
    return [line for line in p.read_text(encoding="utf-8").splitlines()
            if line.strip()]


def _attribute_client(stub: bool, cache_path: str | None,
                      requests_per_second: float,
                      max_in_flight: int) -> perspective.PerspectiveClient:
    cache = perspective.ScoreCache(cache_path) if cache_path else None
    transport = perspective.StubScorer() if stub else None
    return perspective.PerspectiveClient(
        transport,
        cache=cache,
        requests_per_second=requests_per_second,
        max_in_flight=max_in_flight,
    )


def _text_scorer(model_path: str, *, stub_attributes: bool,
                 attribute_cache: str | None, batch_size: int, device):
    """Build a list-of-texts -> probabilities scorer from any model artifact."""
    from . import ensemble as ens

    path = Path(model_path)
    if ens.is_ensemble_dir(path) or path.name == "manifest.json":
        model = ens.load_ensemble(path, device=device)
        return lambda texts: model.score_texts(texts, batch_size=batch_size)
    if baselines.is_model_file(path):
        model = baselines.load_model(path)
        if model.schema_id == baselines.LENGTH_SCHEMA:
            return lambda texts: [
                baselines.predict_proba(model, baselines.length_features(t))
                for t in texts
            ]
        client = _attribute_client(stub_attributes, attribute_cache, 1.0, 1)

        def scorer(texts):
            return [
                baselines.predict_proba(
                    model,
                    baselines.attribute_features(client.score_sentence(t)),
                )
                for t in texts
            ]

        return scorer
    if path.is_dir() and (path / "meta.json").is_file():
        from . import classifier as clf
        model = clf.load_checkpoint(path, device=device)
        return lambda texts: model.score_texts(texts, batch_size=batch_size)
    raise ValidationError(
        f"{path} is neither an ensemble directory, a classifier checkpoint, "
        f"nor a linear model file"
    )


@click.group()
@click.version_option()
def main():
    """Sentence-level propaganda classification toolkit."""


@main.command()
@click.option("--articles", required=True, help="Directory of article<ID>.txt files.")
@click.option("--labels", required=True, help="3-column tab-separated label file.")
@click.option("--name", default="train", show_default=True,
              type=click.Choice([n.value for n in corpus.SplitName]))
@click.option("--out", required=True, help="Output split JSON path.")
@_handled
def ingest(articles, labels, name, out):
    """Parse article and label files into a split file."""
    started = _now()
    sentences = corpus.load_articles(articles)
    label_map = corpus.load_labels(labels)
    split = corpus.join(sentences, label_map, corpus.SplitName(name))
    corpus.save_split(out, split)
    _write_manifest(Path(out), "ingest",
                    {"articles": articles, "labels": labels, "name": name},
                    [Path(articles), Path(labels)], [Path(out)], started)
    click.echo(f"wrote {len(split.sentences)} sentences from "
               f"{len(split.articles)} articles to {out}")


@main.command()
@click.option("--pred", required=True, help="Predictions: labels or probabilities.")
@click.option("--gold", required=True, help="Gold label file.")
@click.option("--threshold", default=0.5, show_default=True,
              help="Probability threshold when predictions are probabilities.")
@click.option("--json-out", default=None, help="Also write the report as JSON.")
@_handled
def evaluate(pred, gold, threshold, json_out):
    """Score predictions against gold labels (positive-class P/R/F1)."""
    report = metrics.evaluate_files(pred, gold, threshold)
    click.echo(metrics.format_report(report))
    if json_out:
        started = _now()
        Path(json_out).write_text(metrics.report_to_json(report), encoding="utf-8")
        _write_manifest(Path(json_out), "evaluate",
                        {"pred": pred, "gold": gold, "threshold": threshold},
                        [Path(pred), Path(gold)], [Path(json_out)], started)


@main.command("score-attributes")
@click.option("--split", "split_path", required=True, help="Split JSON file.")
@click.option("--out", required=True, help="Output attribute table (TSV).")
@click.option("--stub-attributes", "stub", is_flag=True,
              help="Use the deterministic offline stub instead of the live API.")
@click.option("--cache", default=None, help="Score cache file (resumable).")
@click.option("--requests-per-second", default=1.0, show_default=True)
@click.option("--max-in-flight", default=1, show_default=True)
@_handled
def score_attributes(split_path, out, stub, cache, requests_per_second,
                     max_in_flight):
    """Fetch the 12 attribute scores for every sentence of a split."""
    started = _now()
    split = corpus.load_split(split_path)
    client = _attribute_client(stub, cache, requests_per_second, max_in_flight)
    table = client.score_split(split)
    perspective.save_attribute_table(out, table)
    _write_manifest(Path(out), "score-attributes",
                    {"split": split_path, "stub": stub,
                     "requests_per_second": requests_per_second,
                     "max_in_flight": max_in_flight},
                    [Path(split_path)], [Path(out)], started)
    click.echo(f"scored {len(table)} sentences to {out}")


@main.command("train-baseline")
@click.option("--split", "split_path", required=True, help="Labeled split JSON.")
@click.option("--features", required=True,
              type=click.Choice([baselines.LENGTH_SCHEMA, baselines.ATTRIBUTE_SCHEMA]))
@click.option("--scores", default=None,
              help="Attribute table TSV (required for attribute features).")
@click.option("--out", required=True, help="Output model file.")
@click.option("--learning-rate", default=0.1, show_default=True)
@click.option("--iterations", default=2000, show_default=True)
@click.option("--l2", default=1e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@_handled
def train_baseline(split_path, features, scores, out, learning_rate,
                   iterations, l2, seed):
    """Train a logistic-regression baseline on a labeled split."""
    started = _now()
    split = corpus.load_split(split_path)
    if split.labels is None:
        raise ValidationError(f"{split_path} has no labels")
    if features == baselines.ATTRIBUTE_SCHEMA:
        if not scores:
            raise ValidationError(
                "--scores is required for attribute features; "
                "produce it with `propsent score-attributes`"
            )
        table = perspective.load_attribute_table(scores)
        missing = [k for k in split.keys if k not in table]
        if missing:
            raise ValidationError(
                f"attribute table misses {len(missing)} split sentences, "
                f"e.g. {missing[:5]}"
            )
        vectors = [baselines.attribute_features(table[k]) for k in split.keys]
    else:
        vectors = [baselines.length_features(s) for s in split.sentences]
    labels = [split.labels[k] for k in split.keys]
    config = baselines.LinearTrainConfig(
        learning_rate=learning_rate, iterations=iterations, l2=l2, seed=seed
    )
    model = baselines.train_logistic(vectors, labels, config)
    baselines.save_model(model, out)
    inputs = [Path(split_path)] + ([Path(scores)] if scores else [])
    _write_manifest(Path(out), "train-baseline",
                    {"split": split_path, "features": features,
                     "scores": scores, "learning_rate": learning_rate,
                     "iterations": iterations, "l2": l2, "seed": seed},
                    inputs, [Path(out)], started)
    history = model.loss_history
    click.echo(f"trained {features} baseline: loss "
               f"{history[0]:.4f} -> {history[-1]:.4f}; wrote {out}")


@main.command("train-ensemble")
@click.option("--split", "split_path", required=True, help="Labeled split JSON.")
@click.option("--k", default=10, show_default=True, help="Number of folds.")
@click.option("--out-dir", required=True, help="Checkpoint/manifest directory.")
@click.option("--epochs", default=1, show_default=True)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--learning-rate", default=1e-5, show_default=True)
@click.option("--weight-decay", default=0.01, show_default=True)
@click.option("--max-tokens", default=129, show_default=True)
@click.option("--positive-weight", default=5.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--encoder-ref", default=None,
              help=f"Pretrained encoder (default {'bert-large-uncased'!r}; "
                   f"'tiny' = built-in stand-in).")
@click.option("--device", default=None, help="Torch device override.")
@click.option("--oof-out", default=None,
              help="Also write out-of-fold probabilities to this TSV.")
@_handled
def train_ensemble(split_path, k, out_dir, epochs, batch_size, learning_rate,
                   weight_decay, max_tokens, positive_weight, seed,
                   encoder_ref, device, oof_out):
    """Train the k-fold classifier ensemble."""
    from . import classifier as clf
    from . import ensemble as ens

    started = _now()
    split = corpus.load_split(split_path)
    config = clf.TrainConfig(
        epochs=epochs, batch_size=batch_size, learning_rate=learning_rate,
        weight_decay=weight_decay, max_tokens=max_tokens,
        positive_weight=positive_weight, seed=seed,
        encoder_ref=encoder_ref or clf.DEFAULT_ENCODER,
    )
    model = ens.train_kfold(split, k=k, config=config, seed=seed, device=device)
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    manifest = ens.save_ensemble(model, out_path)
    outputs = [manifest]
    if oof_out:
        corpus.save_probabilities(oof_out, ens.oof_predictions(model, split))
        outputs.append(Path(oof_out))
    _write_manifest(out_path, "train-ensemble",
                    {"split": split_path, "k": k, **config.as_mapping()},
                    [Path(split_path)], outputs, started)
    losses = ", ".join(
        f"fold {i}: {m.initial_loss:.4f}->{m.final_loss:.4f}"
        for i, m in enumerate(model.members)
    )
    click.echo(f"trained {k}-fold ensemble ({losses}); manifest at {manifest}")


@main.command()
@click.option("--model", "model_path", required=True,
              help="Ensemble directory/manifest, checkpoint, or linear model file.")
@click.option("--split", "split_path", required=True, help="Split JSON file.")
@click.option("--out", required=True, help="Predicted label file (3 columns).")
@click.option("--proba-out", default=None, help="Also write raw probabilities.")
@click.option("--threshold", default=0.5, show_default=True)
@click.option("--scores", default=None,
              help="Attribute table TSV (required for the attribute baseline).")
@click.option("--batch-size", default=32, show_default=True)
@click.option("--device", default=None)
@_handled
def predict(model_path, split_path, out, proba_out, threshold, scores,
            batch_size, device):
    """Write per-sentence propaganda probabilities and thresholded labels."""
    from . import ensemble as ens

    started = _now()
    split = corpus.load_split(split_path)
    path = Path(model_path)
    if baselines.is_model_file(path):
        model = baselines.load_model(path)
        if model.schema_id == baselines.ATTRIBUTE_SCHEMA:
            if not scores:
                raise ValidationError(
                    "--scores is required to predict with the attribute baseline"
                )
            table = perspective.load_attribute_table(scores)
            missing = [k for k in split.keys if k not in table]
            if missing:
                raise ValidationError(
                    f"attribute table misses {len(missing)} split sentences, "
                    f"e.g. {missing[:5]}"
                )
            probs = [
                baselines.predict_proba(model, baselines.attribute_features(table[k]))
                for k in split.keys
            ]
        else:
            probs = [
                baselines.predict_proba(model, baselines.length_features(s))
                for s in split.sentences
            ]
    else:
        scorer = _text_scorer(model_path, stub_attributes=False,
                              attribute_cache=None, batch_size=batch_size,
                              device=device)
        probs = list(scorer([s.text for s in split.sentences]))
    prob_map = dict(zip(split.keys, probs))
    labels = {k: metrics.apply_threshold(p, threshold)
              for k, p in prob_map.items()}
    corpus.save_labels(out, labels)
    outputs = [Path(out)]
    if proba_out:
        corpus.save_probabilities(proba_out, prob_map)
        outputs.append(Path(proba_out))
    inputs = [Path(model_path), Path(split_path)]
    if scores:
        inputs.append(Path(scores))
    _write_manifest(Path(out), "predict",
                    {"model": model_path, "split": split_path,
                     "threshold": threshold, "batch_size": batch_size},
                    inputs, outputs, started)
    click.echo(f"predicted {len(prob_map)} sentences to {out}")


@main.command("probe-ngrams")
@click.option("--model", "model_path", required=True)
@click.option("--split", "split_paths", required=True, multiple=True,
              help="Split JSON files whose texts define the vocabulary.")
@click.option("--top-n", default=20, show_default=True)
@click.option("--out", required=True, help="Report path (JSON twin added).")
@click.option("--stub-attributes", is_flag=True)
@click.option("--attribute-cache", default=None)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--device", default=None)
@_handled
def probe_ngrams(model_path, split_paths, top_n, out, stub_attributes,
                 attribute_cache, batch_size, device):
    """Rank corpus n-grams by their standalone propaganda probability."""
    started = _now()
    splits = [corpus.load_split(p) for p in split_paths]
    scorer = _text_scorer(model_path, stub_attributes=stub_attributes,
                          attribute_cache=attribute_cache,
                          batch_size=batch_size, device=device)
    vocab = probes.build_ngram_vocab(splits)
    ranked = probes.rank_ngrams(scorer, vocab, top_n=top_n)
    text, document = probes.emit_probe_report(ngrams=ranked)
    paths = probes.save_report(out, text, document)
    _write_manifest(Path(out), "probe-ngrams",
                    {"model": model_path, "splits": list(split_paths),
                     "top_n": top_n},
                    [Path(model_path), *map(Path, split_paths)],
                    list(paths), started)
    click.echo(f"ranked {len(vocab)} n-grams; top {len(ranked)} written to {out}")


@main.command("probe-quotes")
@click.option("--model", "model_path", required=True)
@click.option("--text", "texts", multiple=True, help="Sentence to probe (repeatable).")
@click.option("--texts-file", default=None, help="Line-per-sentence input file.")
@click.option("--templates", default=None, help="Template file (default: built-in).")
@click.option("--delta-threshold", default=probes.DEFAULT_DELTA_THRESHOLD,
              show_default=True)
@click.option("--out", required=True)
@click.option("--stub-attributes", is_flag=True)
@click.option("--attribute-cache", default=None)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--device", default=None)
@_handled
def probe_quotes(model_path, texts, texts_file, templates, delta_threshold,
                 out, stub_attributes, attribute_cache, batch_size, device):
    """Measure how quotation framing moves each sentence's probability."""
    started = _now()
    all_texts = list(texts)
    if texts_file:
        all_texts.extend(_load_texts_file(texts_file))
    if not all_texts:
        raise ValidationError("no input sentences; pass --text or --texts-file")
    template_list = (probes.load_templates(templates) if templates
                     else probes.default_templates())
    scorer = _text_scorer(model_path, stub_attributes=stub_attributes,
                          attribute_cache=attribute_cache,
                          batch_size=batch_size, device=device)
    results = [probes.quote_probe(scorer, t, template_list) for t in all_texts]
    text, document = probes.emit_probe_report(
        quotes=results, delta_threshold=delta_threshold
    )
    paths = probes.save_report(out, text, document)
    inputs = [Path(model_path)] + ([Path(texts_file)] if texts_file else [])
    _write_manifest(Path(out), "probe-quotes",
                    {"model": model_path, "texts": all_texts,
                     "templates": templates, "delta_threshold": delta_threshold},
                    inputs, list(paths), started)
    click.echo(f"probed {len(results)} sentences with "
               f"{len(template_list)} templates; report at {out}")


@main.command("probe-external")
@click.option("--model", "model_path", required=True)
@click.option("--texts-file", required=True, help="Line-per-text input file.")
@click.option("--out", required=True)
@click.option("--stub-attributes", is_flag=True)
@click.option("--attribute-cache", default=None)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--device", default=None)
@_handled
def probe_external(model_path, texts_file, out, stub_attributes,
                   attribute_cache, batch_size, device):
    """Score out-of-corpus texts (e.g. opinion-piece headlines)."""
    started = _now()
    texts = _load_texts_file(texts_file)
    scorer = _text_scorer(model_path, stub_attributes=stub_attributes,
                          attribute_cache=attribute_cache,
                          batch_size=batch_size, device=device)
    scored = probes.score_external(scorer, texts)
    text, document = probes.emit_probe_report(external=scored)
    paths = probes.save_report(out, text, document)
    _write_manifest(Path(out), "probe-external",
                    {"model": model_path, "texts_file": texts_file},
                    [Path(model_path), Path(texts_file)], list(paths), started)
    click.echo(f"scored {len(scored)} external texts; report at {out}")


@main.command()
@click.option("--from-json", "json_paths", required=True, multiple=True,
              help="Machine-readable probe document(s) to merge.")
@click.option("--out", required=True)
@_handled
def report(json_paths, out):
    """Merge probe documents into one combined report."""
    started = _now()
    documents = []
    for path in json_paths:
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"probe document not found: {p}")
        documents.append(json.loads(p.read_text(encoding="utf-8")))
    text, document = probes.report_from_documents(documents)
    paths = probes.save_report(out, text, document)
    _write_manifest(Path(out), "report", {"from_json": list(json_paths)},
                    [Path(p) for p in json_paths], list(paths), started)
    click.echo(f"combined {len(documents)} probe documents into {out}")


if __name__ == "__main__":
    main()
