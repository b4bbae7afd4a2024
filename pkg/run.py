"""
CLI Interface for the Egg Separation Lab
Commands:
- gen-data: Generate a synthetic dataset and save it to disk
- run: Run one experiment (method + dataset) from a YAML config
- reproduce: Run a comparison suite over methods and seeds
- eval: Score an EGT1 estimate stack against a ground-truth stack

Exit codes: 0 success, 1 method/runtime failure, 2 usage/config error.
"""

import click
import logging
import os
import sys
from pathlib import Path
from dotenv import load_dotenv
from colorama import Fore, Style

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from utils.config_utils import load_experiment_config, load_settings, load_suites, synth_config
from utils.errors import ConfigError
from utils.export_utils import export_to_csv, write_json
from utils.metrics import evaluate_estimates
from utils.signal_io import save_dataset
from utils.synthetic_data import gen_synthetic
from utils.tensor_engine import load_tensor
from agents.orchestrator import Orchestrator, run_suite
from agents.report_agent import ReportAgent

# Load environment variables
load_dotenv()

CONFIG_DIR = os.getenv('EGGSEP_CONFIG_DIR', 'config')


def setup_logging(settings: dict) -> None:
    """Setup logging configuration."""
    system = settings['system']
    log_dir = Path(system.get('logs_dir', 'logs'))
    log_dir.mkdir(parents=True, exist_ok=True)

    logging.basicConfig(
        level=getattr(logging, str(system.get('log_level', 'INFO')).upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_dir / "eggsep.log"),
            logging.StreamHandler()
        ]
    )


def fail(message: str, error: Exception) -> None:
    """Print the error and exit with 2 for config problems, 1 otherwise."""
    click.echo(f"\n{Fore.RED}[ERROR] {message}: {error}{Style.RESET_ALL}", err=True)
    logging.error(f"{message}: {error}", exc_info=not isinstance(error, ConfigError))
    sys.exit(2 if isinstance(error, ConfigError) else 1)


@click.group(name='eggsep')
def cli():
    """Egg Separation Lab - semi-supervised single-channel source separation."""
    pass


@cli.command('gen-data')
@click.argument('config_file', type=click.Path(dir_okay=False))
@click.option('--out', 'output_dir', default=None, help='Dataset directory (default: <data_dir>/<family>-seed<seed>)')
def gen_data(config_file, output_dir):
    """Generate a synthetic dataset described by CONFIG_FILE."""
    click.echo(f"\n{Fore.CYAN}Generating dataset...{Style.RESET_ALL}\n")

    try:
        settings = load_settings(CONFIG_DIR)
        setup_logging(settings)
        config = load_experiment_config(config_file, required=('seed', 'dataset'))
        if config['dataset']['source'] != 'synthetic':
            raise ConfigError("gen-data only generates synthetic datasets", key='dataset.source')

        dataset = gen_synthetic(synth_config(config))
        if output_dir is None:
            output_dir = Path(settings['system']['data_dir']) / f"{config['dataset']['family']}-seed{config['seed']}"
        path = save_dataset(dataset, output_dir)

        ReportAgent(settings.get('report')).show_dataset(dataset.summary())
        click.echo(f"\n{Fore.GREEN}[OK] Dataset written to {path}{Style.RESET_ALL}")

    except Exception as e:
        fail("Dataset generation failed", e)


@cli.command('run')
@click.argument('config_file', type=click.Path(dir_okay=False))
def run_experiment(config_file):
    """Run the experiment described by CONFIG_FILE."""
    click.echo(f"\n{Fore.CYAN}Starting experiment...{Style.RESET_ALL}\n")

    try:
        settings = load_settings(CONFIG_DIR)
        setup_logging(settings)
        config = load_experiment_config(config_file)

        orchestrator = Orchestrator(config)
        report = orchestrator.run_experiment()

        ReportAgent(settings.get('report')).show_run(report)
        click.echo(f"\n{Fore.GREEN}[OK] Report written to {orchestrator.output_dir / 'report.json'}{Style.RESET_ALL}")

    except Exception as e:
        fail("Experiment failed", e)


@cli.command()
@click.argument('suite')
@click.option('--jobs', type=click.IntRange(min=1), default=1, help='Parallel worker processes')
@click.option('--out', 'output_dir', default=None, help='Output directory (default: results_dir from settings)')
def reproduce(suite, jobs, output_dir):
    """Run every method and seed of SUITE and print the comparison table."""
    click.echo(f"\n{Fore.CYAN}Reproducing suite '{suite}'...{Style.RESET_ALL}\n")

    try:
        settings = load_settings(CONFIG_DIR)
        setup_logging(settings)
        suites = load_suites(CONFIG_DIR)
        if suite not in suites:
            raise ConfigError(f"Unknown suite '{suite}' (available: {', '.join(sorted(suites))})", key='suite')

        output_dir = output_dir or settings['system']['results_dir']
        table = run_suite(suite, suites[suite], output_dir, jobs=jobs)

        agent = ReportAgent(settings.get('report'))
        agent.show_table(table)
        stats = agent.get_summary_stats(table)
        if stats['failed_cells']:
            click.echo(f"\n{Fore.YELLOW}[WARN] {stats['failed_cells']} cell(s) failed{Style.RESET_ALL}")
        click.echo(f"\n{Fore.GREEN}[OK] Table written to {Path(output_dir) / suite}{Style.RESET_ALL}")

    except Exception as e:
        fail("Suite failed", e)


@cli.command('eval')
@click.argument('estimates_file', type=click.Path(exists=True, dir_okay=False))
@click.argument('truth_file', type=click.Path(exists=True, dir_okay=False))
@click.option('--peak', type=float, default=1.0, help='PSNR peak value')
@click.option('--out', 'output_dir', default=None, help='Also write eval.json and eval.csv here')
def evaluate(estimates_file, truth_file, peak, output_dir):
    """Score ESTIMATES_FILE against TRUTH_FILE (both EGT1 stacks)."""
    try:
        settings = load_settings(CONFIG_DIR)
        setup_logging(settings)

        report = evaluate_estimates(load_tensor(estimates_file), load_tensor(truth_file), peak=peak)
        ReportAgent(settings.get('report')).show_eval(report.aggregate())

        if output_dir:
            write_json(report.to_dict(include_samples=True), str(Path(output_dir) / 'eval.json'))
            export_to_csv(report.rows('eval'), str(Path(output_dir) / 'eval.csv'))
            click.echo(f"\n{Fore.GREEN}[OK] Eval written to {output_dir}{Style.RESET_ALL}")

    except Exception as e:
        fail("Evaluation failed", e)


if __name__ == '__main__':
    cli()
