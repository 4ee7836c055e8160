"""Command-line entry points.

Subcommands: ``edit`` (one exemplar transfer), ``batch`` (a whole manifest),
``evaluate`` (score predictions), ``validate`` (check a corpus), ``catalog``
(print the backend's hookable-layer table). Exit codes: 0 success, 1 runtime
failure, 2 usage error, 3 partial batch failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .backend import enumerate_layers, format_catalog
from .config import RunConfig
from .dataset import ExemplarTask, load_manifest, validate_dataset
from .ddim import trajectory_digest
from .editor import EditResult, edit
from .errors import ExeditError
from .images import load_image, resize, save_png

log = logging.getLogger(__name__)


def _load_task(cfg: RunConfig, x_path: str, x_edit_path: str, y_path: str,
               task_id: str) -> ExemplarTask:
    r = cfg.resolution
    return ExemplarTask(
        id=task_id,
        x=resize(load_image(x_path), r),
        x_edit=resize(load_image(x_edit_path), r),
        y=resize(load_image(y_path), r),
    )


def _write_outputs(result: EditResult, cfg: RunConfig, out_dir: Path,
                   task_id: str) -> Path:
    image_path = out_dir / f"{task_id}.png"
    save_png(result.image, image_path)
    result.provenance.config["run_config"] = cfg.snapshot()
    result.provenance.write(out_dir / f"{task_id}.provenance.json")
    return image_path


def _print_timings(result: EditResult) -> None:
    for name, secs in result.provenance.stage_seconds.items():
        print(f"  {name:<18} {secs:8.3f} s")
    print(f"  {'total':<18} {result.provenance.total_seconds:8.3f} s")


def cmd_edit(args) -> int:
    cfg = RunConfig.load(args.config, overrides=_overrides(args))
    clients = cfg.build_pipeline_clients()
    task_id = args.id or Path(args.target).stem
    task = _load_task(cfg, args.exemplar[0], args.exemplar[1], args.target, task_id)
    result = edit(task, cfg.edit_config(), clients)
    out_dir = Path(args.out) if args.out else cfg.output_dir
    image_path = _write_outputs(result, cfg, out_dir, task_id)
    if args.dump_trajectory:
        from .ddim import ddim_invert

        z0 = clients.backend.encode_image(task.y)
        _, trajectory = ddim_invert(z0, clients.schedule, None, clients.backend)
        digest = trajectory_digest(trajectory, clients.schedule)
        (out_dir / f"{task_id}.trajectory.json").write_text(
            json.dumps(digest, indent=2) + "\n", encoding="utf-8"
        )
    print(f"wrote {image_path}")
    _print_timings(result)
    return 0


def cmd_batch(args) -> int:
    cfg = RunConfig.load(args.config, overrides=_overrides(args))
    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out) if args.out else cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_one(entry_id: str) -> tuple[str, str | None]:
        # every worker owns its backend handle and client sessions
        clients = cfg.build_pipeline_clients()
        try:
            task = manifest.load_task(entry_id, resolution=cfg.resolution)
            result = edit(task, cfg.edit_config(), clients)
            _write_outputs(result, cfg, out_dir, entry_id)
            return entry_id, None
        except Exception as err:
            log.error("entry %s failed: %s", entry_id, err)
            return entry_id, str(err)

    ids = manifest.ids()
    if args.parallel > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            outcomes = list(pool.map(run_one, ids))
    else:
        outcomes = [run_one(i) for i in ids]

    succeeded = [i for i, err in outcomes if err is None]
    failed = {i: err for i, err in outcomes if err is not None}
    summary = {
        "total": len(ids),
        "succeeded": succeeded,
        "failed": failed,
    }
    (out_dir / "batch_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"batch: {len(succeeded)}/{len(ids)} succeeded")
    for entry_id, err in failed.items():
        print(f"  FAILED {entry_id}: {err}")
    return 3 if failed else 0


def cmd_evaluate(args) -> int:
    from .report import evaluate

    cfg = RunConfig.load(args.config)
    manifest = load_manifest(args.manifest)
    captions = {}
    if args.captions:
        captions = json.loads(Path(args.captions).read_text(encoding="utf-8"))
    eval_config = cfg.build_eval_config(
        captions=captions, exclude=set(args.exclude or ())
    )
    report = evaluate(manifest, args.predictions, cfg.build_metric_clients(),
                      eval_config)
    json_path, csv_path = report.write(args.out)
    print(report.to_table())
    print(f"wrote {json_path} and {csv_path}")
    if report.has_skips and not args.allow_skips:
        skipped = {k: len(v) for k, v in report.skips.items() if v}
        print(f"metrics skipped entries: {skipped} (use --allow-skips to tolerate)")
        return 1
    return 0


def cmd_validate(args) -> int:
    manifest = load_manifest(args.manifest)
    report = validate_dataset(manifest)
    print(report.summary())
    return 0 if report.ok else 1


def cmd_catalog(args) -> int:
    cfg = RunConfig.load(args.config)
    backend = cfg.build_backend()
    print(f"backend: {backend.backend_id}")
    print(format_catalog(enumerate_layers(backend)))
    return 0


def _overrides(args) -> dict:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exedit",
        description="Exemplar-driven image editing pipeline and evaluation harness.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("edit", help="transfer one exemplar edit onto a target image")
    p.add_argument("--exemplar", nargs=2, metavar=("X", "X_EDIT"), required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="")
    p.add_argument("--id", default="")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dump-trajectory", action="store_true")
    p.set_defaults(fn=cmd_edit)

    p = sub.add_parser("batch", help="run every manifest entry; failures are isolated")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_batch)

    p = sub.add_parser("evaluate", help="score a prediction directory against a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--captions", default="")
    p.add_argument("--exclude", nargs="*", default=[])
    p.add_argument("--allow-skips", action="store_true")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("validate", help="check a dataset manifest and its images")
    p.add_argument("--manifest", required=True)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("catalog", help="print the backend's hookable layer table")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_catalog)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except ExeditError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
