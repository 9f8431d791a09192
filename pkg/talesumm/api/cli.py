"""
Command-line entry point: synth, match, smooth, train, predict, eval,
consistency, select and schemas.

Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from ..core.config import settings
from ..core.errors import InvalidInputError, ManifestError, TaleSummError
from ..data.checkpoint import load_checkpoint, save_checkpoint
from ..data.manifest import LoadedEpisode, load_manifest
from ..data.records import (
    HistoryRecord,
    LabelRecord,
    MatchRecord,
    ScoreRecord,
    SummaryRecord,
    export_schemas,
    read_record,
    write_record,
)
from ..data.synth import SynthConfig, synth_generate, write_synth
from ..evaluation.report import EvaluationItem, agreement_report, build_report
from ..evaluation.selection import knapsack_select
from ..model.config import TaleSummConfig
from ..model.trainer import LabeledEpisode, TrainConfig, Trainer
from ..processor.label_builder import SmoothConfig, labels_from_matches
from ..processor.shot_matcher import MatchConfig, match_recap
from ..utils.runtime import RuntimeManager

logger = logging.getLogger(__name__)


class UsageError(InvalidInputError):
    pass


class CliParser(argparse.ArgumentParser):
    """
    argparse exits with status 2 on bad flags; here they are input errors (1)
    """

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _read_json(path: str) -> dict:
    file = Path(path)
    if not file.is_file():
        raise InvalidInputError(f"file not found: {file}")
    try:
        return json.loads(file.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{file}: not valid JSON ({exc})") from exc


def _read_list(path: str) -> List[Path]:
    file = Path(path)
    if not file.is_file():
        raise InvalidInputError(f"episode list not found: {file}")
    base = file.parent
    lines = [line.strip() for line in file.read_text().splitlines()]
    return [Path(line) if Path(line).is_absolute() else base / line for line in lines if line and not line.startswith("#")]


def _labeled(episode: LoadedEpisode) -> LabeledEpisode:
    labels_path = episode.labels_path()
    if labels_path is None:
        raise ManifestError(f"episode {episode.manifest.episode_id} has no labels file")
    record = read_record(labels_path, LabelRecord)
    labels = record.to_label_set(episode.manifest.shot_ids(), episode.manifest.utterance_ids())
    return LabeledEpisode(episode.features, labels)


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------
def cmd_synth(args: argparse.Namespace) -> int:
    overrides = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    bundle = synth_generate(SynthConfig.model_validate(overrides))
    write_synth(bundle, args.out_dir)
    return 0


def cmd_match(args: argparse.Namespace) -> int:
    cfg = MatchConfig(
        sim_threshold=args.threshold,
        top_k=args.topk,
        window_radius=args.window_radius,
        max_rounds=args.max_rounds,
    )
    episode = load_manifest(args.episode)
    recap = load_manifest(args.recap)
    results = match_recap(recap.frame_bank(), episode.frame_bank(), cfg)
    record = MatchRecord.from_results(
        episode.manifest.episode_id,
        recap.manifest.episode_id,
        results,
        episode.manifest.shot_ids(),
        recap.manifest.shot_ids(),
        config=cfg.model_dump(),
    )
    write_record(args.out, record)
    return 0


def cmd_smooth(args: argparse.Namespace) -> int:
    smooth_cfg = SmoothConfig(window=args.window)
    episode = load_manifest(args.episode)
    matches = read_record(args.matches, MatchRecord)
    results = matches.to_results(episode.manifest.shot_ids())
    features = episode.features
    labels = labels_from_matches(
        results, features.shot_spans(), features.utterance_spans(), smooth_cfg
    )
    labels.binarize_threshold = args.threshold
    write_record(
        args.out,
        LabelRecord.from_label_set(
            episode.manifest.episode_id,
            labels,
            episode.manifest.shot_ids(),
            episode.manifest.utterance_ids(),
        ),
    )
    return 0


def _model_config(args: argparse.Namespace, first: LoadedEpisode) -> TaleSummConfig:
    values = _read_json(args.model_config) if args.model_config else {}
    values.setdefault("backbone_dims", first.manifest.backbone_dims)
    if first.manifest.utterance_dim is not None:
        values.setdefault("utterance_dim", first.manifest.utterance_dim)
    return TaleSummConfig.model_validate(values)


def cmd_train(args: argparse.Namespace) -> int:
    seed = RuntimeManager.configure(args.seed)
    train_episodes = [load_manifest(p) for p in _read_list(args.train_list)]
    if not train_episodes:
        raise InvalidInputError(f"{args.train_list} lists no episodes")
    train_set = [_labeled(e) for e in train_episodes]
    val_set = [_labeled(load_manifest(p)) for p in _read_list(args.val_list)] if args.val_list else []

    model_config = _model_config(args, train_episodes[0])
    train_config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        weight_decay=args.weight_decay,
        max_lr=args.max_lr,
        seed=seed,
    )
    trainer = Trainer(model_config, train_config)
    if not RuntimeManager.can_train(trainer.model.num_parameters()):
        logger.warning("Available memory looks tight for this model")
    result = trainer.fit(train_set, val_set)

    out = Path(args.out)
    save_checkpoint(
        out,
        result.model,
        meta={"seed": seed, "epoch": result.best_epoch, "steps": result.steps, "train": train_config.model_dump()},
        optimizer=result.optimizer if args.save_optimizer else None,
    )
    write_record(
        out / "history.json",
        HistoryRecord(best_epoch=result.best_epoch, epochs=[r.to_dict() for r in result.history]),
    )
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    episode = load_manifest(args.episode)
    scores = checkpoint.model.predict(episode.features)
    record = ScoreRecord(
        episode_id=episode.manifest.episode_id,
        shots={
            i: float(v) for i, v in zip(episode.manifest.shot_ids(), scores.shot_scores.tolist())
        },
        dialogs={
            i: float(v)
            for i, v in zip(episode.manifest.utterance_ids(), scores.dialog_scores.tolist())
        },
    )
    write_record(args.out, record)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    if len(args.scores) != len(args.labels):
        raise UsageError(f"{len(args.scores)} score files for {len(args.labels)} label files")
    items = []
    for score_path, label_path in zip(args.scores, args.labels):
        labels = read_record(label_path, LabelRecord)
        scores = read_record(score_path, ScoreRecord)
        shot_ids, utterance_ids = list(labels.shots), list(labels.dialogs)
        items.append(
            EvaluationItem(
                episode_id=labels.episode_id,
                shot_scores=scores.ordered(shot_ids, "shots"),
                dialog_scores=scores.ordered(utterance_ids, "dialogs") if scores.dialogs else [],
                labels=labels.to_label_set(shot_ids, utterance_ids if scores.dialogs else []),
            )
        )
    report = build_report(
        items,
        threshold=args.threshold,
        pooled=args.pooled,
        config={"threshold": args.threshold, "pooled": args.pooled, "scores": args.scores, "labels": args.labels},
        with_timestamp=not args.no_timestamp,
    )
    write_record(args.out, report)
    return 0


def cmd_consistency(args: argparse.Namespace) -> int:
    records = [read_record(path, LabelRecord) for path in args.labels]
    shot_ids, utterance_ids = list(records[0].shots), list(records[0].dialogs)
    sources = [r.to_label_set(shot_ids, utterance_ids) for r in records]
    if args.threshold is not None:
        for source in sources:
            source.binarize_threshold = args.threshold
    record = agreement_report(
        sources, names=[Path(p).stem for p in args.labels], with_timestamp=not args.no_timestamp
    )
    write_record(args.out, record)
    return 0


def cmd_select(args: argparse.Namespace) -> int:
    episode = load_manifest(args.episode)
    scores = read_record(args.scores, ScoreRecord)
    shot_ids = episode.manifest.shot_ids()
    durations = episode.durations()
    selected = knapsack_select(scores.ordered(shot_ids, "shots"), durations, args.budget)
    record = SummaryRecord(
        episode_id=episode.manifest.episode_id,
        budget_fraction=args.budget,
        budget_s=float(args.budget * durations.sum()),
        selected=[shot_ids[i] for i in selected],
        selected_duration_s=float(durations[selected].sum()) if selected else 0.0,
    )
    write_record(args.out, record)
    return 0


def cmd_schemas(args: argparse.Namespace) -> int:
    export_schemas(args.out_dir)
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------
def build_parser() -> CliParser:
    parser = CliParser(prog="talesumm", description="Story summarization of TV episodes")
    parser.add_argument(
        "--log-level",
        default=settings.log_level,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="overrides TALESUMM_LOG_LEVEL",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic episode, recap and planted labels")
    p.add_argument("--config", help="SynthConfig JSON (defaults when omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", help="match recap shots to episode shots")
    p.add_argument("--episode", required=True)
    p.add_argument("--recap", required=True)
    p.add_argument("--threshold", type=float, default=0.85)
    p.add_argument("--topk", type=int, default=3)
    p.add_argument("--window-radius", type=int, default=10)
    p.add_argument("--max-rounds", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("smooth", help="turn matches into soft shot and dialog labels")
    p.add_argument("--matches", required=True)
    p.add_argument("--episode", required=True)
    p.add_argument("--window", type=int, default=17)
    p.add_argument("--threshold", type=float, default=0.5, help="binarization threshold stored with the labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("train", help="train the model")
    p.add_argument("--train-list", required=True, help="file with one manifest path per line")
    p.add_argument("--val-list")
    p.add_argument("--model-config", help="TaleSummConfig JSON; backbone dims default to the manifest's")
    p.add_argument("--epochs", type=int, default=65)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--max-lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=settings.default_seed)
    p.add_argument("--save-optimizer", action="store_true", help="store AdamW moments in the checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score shots and utterances of an episode")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episode", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="AP and rank correlations of scores against labels")
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--labels", nargs="+", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--pooled", action="store_true", help="pool items across episodes instead of macro-averaging")
    p.add_argument("--no-timestamp", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("consistency", help="agreement between label sources")
    p.add_argument("--labels", nargs="+", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--no-timestamp", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("select", help="budgeted summary from scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--episode", required=True)
    p.add_argument("--budget", type=float, default=0.15)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("schemas", help="write JSON schemas of every record")
    p.add_argument("--out-dir", default=str(settings.schema_dir))
    p.set_defaults(func=cmd_schemas)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code

    logging.basicConfig(
        level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    logger.debug(f"{settings.app_name}: {args.command}")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: invalid value: {exc}", file=sys.stderr)
        return 1
    except (InvalidInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TaleSummError as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        logger.exception(f"{args.command} failed")
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
