"""Tests for terminal summaries."""

from agents.report_agent import ReportAgent

TABLE = {
    'suite': 'demo', 'metric': 'psnr_mean', 'columns': ['psnr_mean', 'ssim_mean'], 'seeds': [1, 2],
    'rows': [
        {'method': 'Const', 'psnr_mean': 6.1, 'ssim_mean': 0.4, 'failed': 0},
        {'method': 'NES', 'psnr_mean': 22.4, 'ssim_mean': 0.9, 'failed': 0},
        {'method': 'Supervised', 'psnr_mean': None, 'ssim_mean': None, 'failed': 2},
    ],
}


class TestReportAgent:
    def test_summary_stats(self):
        stats = ReportAgent().get_summary_stats(TABLE)
        assert stats == {'methods': 3, 'failed_cells': 2, 'best': 'NES'}

    def test_table_lists_every_method(self):
        text = ReportAgent().format_table(TABLE)
        for method in ('Const', 'NES', 'Supervised'):
            assert method in text
        assert '[FAIL 2]' in text
        assert 'n/a' in text

    def test_run_report(self):
        report = {'status': 'ok', 'method': 'nes', 'dataset': {'name': 'bars'},
                  'metrics': {'aggregate': {'psnr_mean': 20.0, 'ssim_mean': 0.85}},
                  'traces': {'nes': [{'iteration': 1, 'final_loss': 0.1, 'metrics': {'psnr_mean': 18.0},
                                      'lambda': {'lambda': 0.4}}]}}
        text = ReportAgent({'digits': 1}).format_run(report)
        assert 'PSNR: 20.0' in text
        assert 'lambda=0.400' in text

    def test_quiet_mode_prints_nothing(self, capsys):
        ReportAgent({'terminal_output': False}).show_table(TABLE)
        assert capsys.readouterr().out == ''
