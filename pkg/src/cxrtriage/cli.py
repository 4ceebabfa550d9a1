"""cxr-triage: batch front end for labeling, training, and evaluation.

Four subcommands share one contract: a run writes its outputs plus a single
manifest.json into --out, every file lands atomically (temp file, then
rename), inputs are never modified, and exit codes are stable:

    0  success
    2  unreadable or malformed input files
    3  configuration problems (flags, config file, ontology)
    4  degenerate evaluation data (for example a single-class holdout)

Commands:

    label  reports.jsonl -> labels.csv + evidence.json
    train  synthetic or on-disk images -> model.ckpt + training_log.csv
    eval   score table or model+images -> ROC/PR artifacts + operating point
    synth  deterministic PGM dataset for the desk-scale pipeline
"""

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, evalkit
from . import reports as reportsmod
from .errors import ConfigError, CxrTriageError, DegenerateDataError, OntologyError
from .net import (
    AugmentPolicy,
    NadamConfig,
    build_pyramid_graph,
    load_image,
    load_model,
    predict_scores,
    read_config_file,
    resolve_profile,
    save_image,
    save_model,
    train_toy,
    training_log_csv,
)
from .ontology import default_ontology_path, load_ontology

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_DEGENERATE = 4

log = logging.getLogger("cxr-triage")


class _InputError(Exception):
    """An input file could not be read or parsed (exit code 2)."""


def _read_input(description, reader):
    """Run a reader callable, folding failures into one input diagnostic."""
    try:
        return reader()
    except (OSError, ValueError, KeyError) as exc:
        raise _InputError(f"{description}: {exc}") from exc


def _atomic_write(path, write_fn):
    """Produce path by writing a sibling temp file and renaming it in."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        write_fn(Path(tmp))
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _atomic_text(path, text):
    _atomic_write(path, lambda p: p.write_text(text, encoding="utf-8"))


def _utc_now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_manifest(out_dir, command, started, seed, config, inputs, outputs):
    """One manifest.json per run, written last so it vouches for the rest."""
    manifest = {
        "command": command,
        "config": config,
        "finished_at": _utc_now(),
        "inputs": {key: str(value) for key, value in inputs.items()},
        "outputs": {key: str(value) for key, value in outputs.items()},
        "seed": seed,
        "started_at": started,
        "tool": "cxr-triage",
        "version": __version__,
    }
    path = Path(out_dir) / "manifest.json"
    _atomic_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _resolve(args):
    """Profile defaults, config-file overrides, then the --seed flag."""
    overrides = read_config_file(args.config) if args.config else None
    seed = args.seed if args.seed is not None else 0
    return resolve_profile(args.profile, overrides, seed=seed), seed


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- label


def cmd_label(args):
    started = _utc_now()
    ontology_path = Path(args.ontology) if args.ontology else default_ontology_path()
    try:
        ontology = load_ontology(ontology_path)
    except OSError as exc:
        # A missing or unreadable ontology is a configuration problem:
        # nothing has been written yet, so the run leaves no partial output.
        raise OntologyError(f"ontology: {exc}") from exc

    raw = _read_input(
        "reports", lambda: Path(args.reports).read_text(encoding="utf-8"))

    labels = []
    skipped = 0
    for number, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            log.warning("reports line %d: invalid JSON (%s); record skipped",
                        number, exc)
            skipped += 1
            continue
        if not isinstance(record, dict) or not isinstance(record.get("study_id"), str) \
                or not isinstance(record.get("text"), str):
            log.warning("reports line %d: expected study_id and text strings; "
                        "record skipped", number)
            skipped += 1
            continue
        try:
            labels.append(reportsmod.label_text(
                record["study_id"], record["text"], ontology))
        except CxrTriageError as exc:
            log.warning("reports line %d (%s): %s; record skipped",
                        number, record["study_id"], exc)
            skipped += 1

    out = _out_dir(args)
    labels_path = out / "labels.csv"
    evidence_path = out / "evidence.json"
    _atomic_write(labels_path, lambda p: reportsmod.write_labels_csv(labels, p))
    _atomic_write(evidence_path, lambda p: reportsmod.write_evidence_json(labels, p))
    _write_manifest(
        out, "label", started, args.seed if args.seed is not None else 0,
        config={"ontology": str(ontology_path)},
        inputs={"reports": args.reports},
        outputs={"labels_csv": labels_path, "evidence_json": evidence_path},
    )
    log.info("labeled %d studies (%d records skipped) -> %s",
             len(labels), skipped, labels_path)
    return EXIT_OK


# ---------------------------------------------------------------- train


def _read_labels_csv(path):
    """study_id -> label map from a two-column CSV."""
    def reader():
        with open(path, newline="") as fh:
            table = {}
            for record in csv.DictReader(fh):
                label = record["label"]
                if label not in ("normal", "abnormal"):
                    raise ValueError(
                        f"{record['study_id']}: label {label!r} is not "
                        "normal/abnormal")
                table[record["study_id"]] = label
            return table
    return _read_input(f"labels ({path})", reader)


def _load_image_dataset(images_dir, label_table):
    """(image, 1|0) pairs for every labeled study, sorted by study id."""
    images_dir = Path(images_dir)
    dataset = []
    for study_id in sorted(label_table):
        image, _ = _read_input(
            f"image {study_id}",
            lambda sid=study_id: load_image(images_dir / f"{sid}.pgm"))
        dataset.append((image, 1 if label_table[study_id] == "normal" else 0))
    if not dataset:
        raise _InputError(f"labels: no studies listed for {images_dir}")
    return dataset


def _split_holdout(dataset, fraction=0.25):
    """Per-class leading slice as holdout; deterministic for a sorted input."""
    normals = [pair for pair in dataset if pair[1] == 1]
    abnormals = [pair for pair in dataset if pair[1] == 0]
    k_n = max(1, round(len(normals) * fraction)) if normals else 0
    k_a = max(1, round(len(abnormals) * fraction)) if abnormals else 0
    holdout = normals[:k_n] + abnormals[:k_a]
    train = normals[k_n:] + abnormals[k_a:]
    return train, holdout


def cmd_train(args):
    started = _utc_now()
    profile, seed = _resolve(args)
    train_cfg = profile.train
    if args.epochs is not None:
        train_cfg = dataclasses.replace(train_cfg, epochs=args.epochs)

    if args.synthetic:
        n_train, n_holdout = args.train_per_class, args.holdout_per_class
        data = evalkit.make_synthetic_dataset(
            n_train + n_holdout, size=profile.graph.input_size, seed=seed)
        train_set = data[:2 * n_train]
        holdout_set = data[2 * n_train:]
        data_source = {"synthetic": f"{n_train}+{n_holdout} per class"}
    elif args.images and args.labels:
        label_table = _read_labels_csv(args.labels)
        dataset = _load_image_dataset(args.images, label_table)
        train_set, holdout_set = _split_holdout(dataset)
        data_source = {"images": args.images, "labels": args.labels}
    else:
        raise ConfigError(
            "train: provide --synthetic or both --images and --labels")

    graph = build_pyramid_graph(profile.graph)
    policy = None if args.no_augment else AugmentPolicy(seed=seed)
    hyper = NadamConfig(learning_rate=train_cfg.learning_rate)

    history = train_toy(
        graph, train_set, holdout_set, policy=policy, hyper=hyper,
        epochs=train_cfg.epochs, batch_size=train_cfg.batch_size,
        shuffle_seed=seed)
    for epoch, mean_loss, auc in history:
        log.info("epoch %d: mean_loss=%.6f holdout_auc=%.4f",
                 epoch, mean_loss, auc)

    out = _out_dir(args)
    checkpoint_path = out / "model.ckpt"
    log_path = out / "training_log.csv"
    _atomic_write(checkpoint_path, lambda p: save_model(p, graph))
    _atomic_text(log_path, training_log_csv(history))
    _write_manifest(
        out, "train", started, seed,
        config={
            "profile": profile.name,
            "graph": profile.graph.to_dict(),
            "train": dataclasses.asdict(train_cfg),
            "augment": not args.no_augment,
        },
        inputs=data_source,
        outputs={"checkpoint": checkpoint_path, "training_log": log_path},
    )
    log.info("checkpoint -> %s", checkpoint_path)
    return EXIT_OK


# ---------------------------------------------------------------- eval


def _score_images(model_path, images_dir):
    """(study_ids, scores) for every .pgm under images_dir, sorted by name."""
    graph = _read_input(f"model ({model_path})", lambda: load_model(model_path))
    paths = sorted(Path(images_dir).glob("*.pgm"))
    if not paths:
        raise _InputError(f"images: no .pgm files in {images_dir}")
    dataset = []
    for path in paths:
        image, _ = _read_input(f"image {path.name}", lambda p=path: load_image(p))
        dataset.append((image, 0))
    scores = predict_scores(graph, dataset)
    return [path.stem for path in paths], scores


def cmd_eval(args):
    started = _utc_now()
    if args.consensus and not args.consensus_csv:
        raise ConfigError("eval: --consensus requires --consensus-csv")

    if args.scores:
        table = _read_input(
            f"scores ({args.scores})",
            lambda: evalkit.ScoreTable.from_csv(args.scores))
        ids = [row.study_id for row in table.rows]
        scores = list(table.scores)
        labels = {row.study_id: row.label for row in table.rows}
        inputs = {"scores": args.scores}
    elif args.model and args.images:
        ids, scores = _score_images(args.model, args.images)
        labels = _read_labels_csv(args.labels) if args.labels else None
        inputs = {"model": args.model, "images": args.images}
        if args.labels:
            inputs["labels"] = args.labels
    else:
        raise ConfigError(
            "eval: provide --scores or both --model and --images")

    if args.consensus_csv:
        records = _read_input(
            f"consensus ({args.consensus_csv})",
            lambda: evalkit.read_consensus_csv(args.consensus_csv))
        triple, majority = evalkit.consensus_partition(records)
        mode = args.consensus or "majority"
        labels = dict(triple if mode == "triple" else majority)
        inputs["consensus"] = args.consensus_csv
    if labels is None:
        raise ConfigError("eval: provide --labels or --consensus-csv "
                          "when scoring with --model")

    kept = [(sid, score) for sid, score in zip(ids, scores) if sid in labels]
    table = evalkit.ScoreTable.from_arrays(
        [sid for sid, _ in kept],
        [score for _, score in kept],
        [labels[sid] for sid, _ in kept],
    )

    roc = evalkit.roc_curve(table)
    pr = evalkit.pr_curve(table)
    operating = evalkit.zero_miss_operating_point(table)

    out = _out_dir(args)
    paths = {
        "roc_csv": out / "roc.csv",
        "pr_csv": out / "pr.csv",
        "roc_svg": out / "roc.svg",
        "operating_point": out / "operating_point.json",
    }
    _atomic_write(paths["roc_csv"], lambda p: evalkit.write_roc_csv(roc, p))
    _atomic_write(paths["pr_csv"], lambda p: evalkit.write_pr_csv(pr, p))
    _atomic_text(paths["roc_svg"], evalkit.roc_svg(roc))
    _atomic_write(paths["operating_point"], lambda p: operating.to_json(p))
    _write_manifest(
        out, "eval", started, args.seed if args.seed is not None else 0,
        config={"consensus": args.consensus or
                ("majority" if args.consensus_csv else None),
                "studies": len(table)},
        inputs=inputs, outputs=paths,
    )
    log.info("%d studies: AUC=%.4f, zero-miss yield %.4f at threshold %.6g",
             len(table), roc.auc, operating.normal_yield, operating.threshold)
    return EXIT_OK


# ---------------------------------------------------------------- synth


def cmd_synth(args):
    started = _utc_now()
    profile, seed = _resolve(args)
    data = evalkit.make_synthetic_dataset(
        args.per_class, size=profile.graph.input_size, seed=seed)

    out = _out_dir(args)
    images_dir = out / "images"
    images_dir.mkdir(exist_ok=True)
    rows = ["study_id,label"]
    # Full-range window in raw 16-bit units, so loading reverses the
    # quantization exactly up to half a gray level.
    for index, (image, label) in enumerate(data):
        study_id = f"synth-{index:05d}"
        _atomic_write(images_dir / f"{study_id}.pgm",
                      lambda p, img=image: save_image(p, img))
        sidecar = {"study_id": study_id, "window_center": 32767.5,
                   "window_width": 65535.0}
        _atomic_text(images_dir / f"{study_id}.json",
                     json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        rows.append(f"{study_id},{'normal' if label == 1 else 'abnormal'}")
    labels_path = out / "labels.csv"
    _atomic_text(labels_path, "\n".join(rows) + "\n")
    _write_manifest(
        out, "synth", started, seed,
        config={"per_class": args.per_class,
                "input_size": list(profile.graph.input_size)},
        inputs={},
        outputs={"images": images_dir, "labels_csv": labels_path},
    )
    log.info("wrote %d images -> %s", len(data), images_dir)
    return EXIT_OK


# ---------------------------------------------------------------- wiring


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="random seed for every stream (default 0)")
    common.add_argument("--profile", choices=("desk", "full"), default="desk",
                        help="configuration profile (default desk)")
    common.add_argument("--config", metavar="PATH",
                        help="key=value file overriding profile defaults")

    parser = argparse.ArgumentParser(
        prog="cxr-triage",
        description="Chest X-ray normalcy triage: label reports, train the "
                    "pyramid classifier, and evaluate triage operating points.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_label = sub.add_parser(
        "label", parents=[common],
        help="label a JSONL report corpus into labels.csv + evidence.json")
    p_label.add_argument("--reports", required=True, metavar="JSONL",
                         help="corpus of {study_id, text} records, one per line")
    p_label.add_argument("--ontology", metavar="JSON",
                         help="finding ontology (default: bundled ontology)")
    p_label.add_argument("--out", required=True, metavar="DIR",
                         help="output directory")
    p_label.set_defaults(func=cmd_label)

    p_train = sub.add_parser(
        "train", parents=[common],
        help="train the classifier, writing model.ckpt + training_log.csv")
    p_train.add_argument("--synthetic", action="store_true",
                         help="train on the built-in synthetic blob dataset")
    p_train.add_argument("--images", metavar="DIR",
                         help="directory of <study_id>.pgm training images")
    p_train.add_argument("--labels", metavar="CSV",
                         help="study_id,label file covering the images")
    p_train.add_argument("--epochs", type=int, default=None,
                         help="override the profile epoch count")
    p_train.add_argument("--train-per-class", type=int, default=60,
                         metavar="N", help="synthetic training images per "
                         "class (default 60)")
    p_train.add_argument("--holdout-per-class", type=int, default=30,
                         metavar="N", help="synthetic holdout images per "
                         "class (default 30)")
    p_train.add_argument("--no-augment", action="store_true",
                         help="disable rotation/shift augmentation")
    p_train.add_argument("--out", required=True, metavar="DIR",
                         help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser(
        "eval", parents=[common],
        help="write ROC/PR artifacts and the zero-miss operating point")
    p_eval.add_argument("--scores", metavar="CSV",
                        help="study_id,score,label table to evaluate directly")
    p_eval.add_argument("--model", metavar="CKPT",
                        help="checkpoint used to score --images")
    p_eval.add_argument("--images", metavar="DIR",
                        help="directory of .pgm images to score")
    p_eval.add_argument("--labels", metavar="CSV",
                        help="study_id,label reference for scored images")
    p_eval.add_argument("--consensus-csv", metavar="CSV",
                        help="three-reader study_id,r1,r2,r3 table")
    p_eval.add_argument("--consensus", choices=("triple", "majority"),
                        help="restrict to unanimous studies (triple) or use "
                        "the 2-of-3 vote (majority; default when a consensus "
                        "table is given)")
    p_eval.add_argument("--out", required=True, metavar="DIR",
                        help="output directory")
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser(
        "synth", parents=[common],
        help="write a deterministic synthetic PGM dataset")
    p_synth.add_argument("--per-class", type=int, default=25, metavar="N",
                         help="images per class (default 25)")
    p_synth.add_argument("--out", required=True, metavar="DIR",
                         help="output directory")
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except _InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (ConfigError, OntologyError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except DegenerateDataError as exc:
        log.error("%s", exc)
        return EXIT_DEGENERATE
    except CxrTriageError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
