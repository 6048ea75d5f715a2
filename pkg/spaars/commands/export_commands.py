"""export: metrics to CSV or SVG, gate snapshots to heatmap CSV."""
from spaars.commands.common import ensure_writable
from spaars.services.export_service import EXPORT_KINDS, export_service
from spaars.utils.checkpoint import resolve_output
from spaars.utils.errors import SpaarsError
from spaars.utils.logger import log_error


def register(subparsers):
    parser = subparsers.add_parser("export", help="Reformat run outputs")
    parser.add_argument("--kind", required=True, choices=EXPORT_KINDS)
    parser.add_argument("inputs", nargs="+", help="metrics.jsonl file(s), or a policy snapshot for heatmap-csv")
    parser.add_argument("--out", required=True)
    parser.add_argument("--force", action="store_true")
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    try:
        out = resolve_output(args.out)
        ensure_writable(out, args.force)
        export_service.export(args.kind, args.inputs, out)
        print(str(out))
        return 0
    except SpaarsError as e:
        log_error("export failed", error=str(e))
        raise
    except Exception as e:
        log_error("export failed - unexpected error", error=str(e))
        raise
