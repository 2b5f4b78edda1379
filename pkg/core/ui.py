import io
import sys
from typing import Dict, List, Optional, Sequence


class UI:
    # --- ANSI COLORS ---
    G = "\033[92m"  # Green
    R = "\033[91m"  # Red
    B = "\033[94m"  # Blue
    C = "\033[96m"  # Cyan
    Y = "\033[93m"  # Yellow
    M = "\033[95m"  # Magenta
    RESET = "\033[0m"

    @staticmethod
    def setup_terminal():
        if hasattr(sys.stdout, 'reconfigure'):
            sys.stdout.reconfigure(encoding='utf-8')
        else:
            sys.stdout = io.TextIOWrapper(sys.stdout.buffer, encoding='utf-8')

    @classmethod
    def print_banner(cls):
        banner = f"""
        {cls.C} ███████╗████████╗██████╗  █████╗ ████████╗ █████╗
         ██╔════╝╚══██╔══╝██╔══██╗██╔══██╗╚══██╔══╝██╔══██╗
         ███████╗   ██║   ██████╔╝███████║   ██║   ███████║
         ╚════██║   ██║   ██╔══██╗██╔══██║   ██║   ██╔══██║
         ███████║   ██║   ██║  ██║██║  ██║   ██║   ██║  ██║
         ╚══════╝   ╚═╝   ╚═╝  ╚═╝╚═╝  ╚═╝   ╚═╝   ╚═╝  ╚═╝{cls.RESET}
         depth + rigid motion layers from three frames
        """
        print(banner)

    @classmethod
    def info(cls, msg):
        print(f"{cls.G}[+]{cls.RESET} {msg}")

    @classmethod
    def error(cls, msg):
        print(f"{cls.R}[-]{cls.RESET} {msg}")

    @classmethod
    def warning(cls, msg):
        print(f"{cls.Y}[!]{cls.RESET} {msg}")

    @classmethod
    def highlight(cls, label, value):
        print(f"{cls.C}{label}:{cls.RESET} {value}")

    @classmethod
    def print_metrics_table(cls, title: str, rows: List[Dict], columns: Sequence[str],
                            precision: int = 4):
        """Render result rows as a table; rich when available, aligned text otherwise."""

        def cell(v) -> str:
            if v is None:
                return "-"
            if isinstance(v, float):
                return f"{v:.{precision}f}"
            return str(v)

        try:
            from rich.console import Console
            from rich.table import Table
            table = Table(title=title)
            for col in columns:
                table.add_column(col, justify="right")
            for row in rows:
                table.add_row(*(cell(row.get(c)) for c in columns))
            Console().print(table)
        except ImportError:
            widths = [max([len(c)] + [len(cell(r.get(c))) for r in rows]) for c in columns]
            divider = "-" * (sum(widths) + 3 * len(widths))
            print(f"\n{divider}\n{title}\n{divider}")
            print(" | ".join(c.rjust(w) for c, w in zip(columns, widths)))
            for row in rows:
                print(" | ".join(cell(row.get(c)).rjust(w) for c, w in zip(columns, widths)))
            print(f"{divider}\n")

    @classmethod
    def print_check_summary(cls, results: Dict[str, Optional[str]]):
        failed = [name for name, msg in results.items() if msg is not None]
        color = cls.R if failed else cls.G
        print(f"\n{color}{len(results) - len(failed)}/{len(results)} check groups passed{cls.RESET}")
        for name in failed:
            print(f"    {cls.Y}•{cls.RESET} {name}: {results[name]}")
