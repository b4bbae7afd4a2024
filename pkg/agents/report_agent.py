"""
Report Agent - Prints experiment results.
Responsibilities:
- Format run reports, suite tables and eval results for the terminal
- Highlight the best method and failed cells with colors
"""

import logging
from typing import Any, Dict, List, Optional

from colorama import Fore, Style, init

# Initialize colorama for Windows support
init(autoreset=True)

logger = logging.getLogger(__name__)

METRIC_LABELS = {
    'psnr_mean': 'PSNR',
    'ssim_mean': 'SSIM',
    'sdr_median': 'SDR(med)',
    'si_sdr_median': 'SI-SDR(med)',
}


class ReportAgent:
    """Agent responsible for terminal output of results."""

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        config = config or {}
        self.terminal_output = config.get('terminal_output', True)
        self.digits = config.get('digits', 2)
        self.show_iterations = config.get('show_iterations', True)

    def _fmt(self, value: Optional[float], digits: Optional[int] = None) -> str:
        if value is None:
            return 'n/a'
        return f"{value:.{self.digits if digits is None else digits}f}"

    def _get_status_color(self, status: str) -> str:
        if status == 'ok':
            return Fore.GREEN
        elif status == 'failed':
            return Fore.RED
        return Fore.YELLOW

    def _banner(self, title: str) -> List[str]:
        return [f"\n{Fore.CYAN}{'=' * 80}{Style.RESET_ALL}",
                f"{Fore.CYAN}{title}{Style.RESET_ALL}",
                f"{Fore.CYAN}{'=' * 80}{Style.RESET_ALL}"]

    def format_metrics(self, aggregate: Dict[str, Optional[float]]) -> str:
        parts = []
        for key, label in METRIC_LABELS.items():
            if aggregate.get(key) is not None:
                digits = 3 if key == 'ssim_mean' else self.digits
                parts.append(f"{label}: {self._fmt(aggregate[key], digits)}")
        return ' | '.join(parts) if parts else 'no metrics'

    def format_dataset(self, summary: Dict[str, Any]) -> str:
        lines = self._banner(f"DATASET: {summary.get('name', 'dataset')}")
        lines.append(f"Sample shape: {summary.get('sample_shape')}")
        lines.append(f"Observed: {summary.get('n_b')} | Mixtures: {summary.get('n_y')} | "
                     f"Eval triples: {summary.get('n_eval')}")
        return '\n'.join(lines)

    def format_run(self, report: Dict[str, Any]) -> str:
        """
        Format one experiment report for display.

        Args:
            report: Report dictionary as written to report.json

        Returns:
            Formatted string
        """
        status = report.get('status', 'unknown')
        color = self._get_status_color(status)
        lines = self._banner(f"RUN: {report.get('method', '?')} on {report.get('dataset', {}).get('name', '?')}")
        lines.append(f"Status: {color}{status.upper()}{Style.RESET_ALL}")
        if report.get('error'):
            lines.append(f"{Fore.RED}Error: {report['error']}{Style.RESET_ALL}")

        metrics = report.get('metrics')
        if metrics:
            lines.append(self.format_metrics(metrics['aggregate']))

        iterations = (report.get('traces') or {}).get('nes') or []
        if self.show_iterations and iterations:
            lines.append(f"\n{Fore.WHITE}NES iterations:{Style.RESET_ALL}")
            for state in iterations:
                lam = state.get('lambda')
                lam_text = f" | lambda={self._fmt(lam['lambda'], 3)}" if lam else ''
                agg = state.get('metrics') or {}
                lines.append(f"  t={state['iteration']:>2} loss={self._fmt(state.get('final_loss'), 5)} "
                             f"{self.format_metrics(agg)}{lam_text}")
        return '\n'.join(lines)

    def format_table(self, table: Dict[str, Any]) -> str:
        """Format a suite comparison table; the best primary-metric row is green."""
        columns = table['columns']
        primary = table.get('metric', columns[0])
        rows = table['rows']
        present = [r for r in rows if r.get(primary) is not None]
        best = max(present, key=lambda r: r[primary])['method'] if present else None

        lines = self._banner(f"SUITE: {table.get('suite', '?')} (seeds {table.get('seeds')})")
        header = f"{'method':<12}" + ''.join(f"{METRIC_LABELS.get(c, c):>14}" for c in columns) + f"{'status':>10}"
        lines.append(header)
        lines.append('-' * len(header))
        for row in rows:
            color = Fore.GREEN if row['method'] == best else ''
            status = '[OK]' if not row.get('failed') else f"[FAIL {row['failed']}]"
            status_color = Fore.RED if row.get('failed') else ''
            cells = ''.join(f"{self._fmt(row.get(c), 3 if c == 'ssim_mean' else None):>14}" for c in columns)
            lines.append(f"{color}{row['method']:<12}{cells}{Style.RESET_ALL}{status_color}{status:>10}{Style.RESET_ALL}")
        return '\n'.join(lines)

    def show_run(self, report: Dict[str, Any]) -> None:
        if self.terminal_output:
            print(self.format_run(report))
        logger.info(f"Reported run '{report.get('method')}' with status {report.get('status')}")

    def show_table(self, table: Dict[str, Any]) -> None:
        if self.terminal_output:
            print(self.format_table(table))
        logger.info(f"Reported suite '{table.get('suite')}' with {len(table['rows'])} methods")

    def show_dataset(self, summary: Dict[str, Any]) -> None:
        if self.terminal_output:
            print(self.format_dataset(summary))

    def show_eval(self, aggregate: Dict[str, Optional[float]]) -> None:
        if self.terminal_output:
            lines = self._banner(f"EVAL: {aggregate.get('count', 0)} samples")
            lines.append(self.format_metrics(aggregate))
            print('\n'.join(lines))

    def get_summary_stats(self, table: Dict[str, Any]) -> Dict[str, Any]:
        """
        Summary of a suite table.

        Returns:
            Statistics dictionary (methods, failed cells, best method)
        """
        primary = table.get('metric', 'psnr_mean')
        present = [r for r in table['rows'] if r.get(primary) is not None]
        return {
            'methods': len(table['rows']),
            'failed_cells': sum(r.get('failed', 0) for r in table['rows']),
            'best': max(present, key=lambda r: r[primary])['method'] if present else None,
        }
