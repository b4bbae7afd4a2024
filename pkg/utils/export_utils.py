"""
Export utilities for experiment results
Supports JSON reports, CSV tables and an HTML comparison table
"""

import csv
import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence


def _clean(value: Any) -> Any:
    """Convert numpy scalars and arrays into JSON-native values."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, 'tolist'):
        return _clean(value.tolist())
    if isinstance(value, float) and value != value:
        return None
    return value


def write_json(data: Dict[str, Any], output_path: str) -> str:
    """
    Write a mapping as stable JSON (sorted keys, fixed indentation).

    Args:
        data: Mapping to serialize
        output_path: Path to save JSON file

    Returns:
        Path to created JSON file
    """
    output_file = Path(output_path)
    output_file.parent.mkdir(parents=True, exist_ok=True)

    with open(output_file, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(_clean(data), f, indent=2, sort_keys=True)
        f.write('\n')

    return str(output_file)


def _format_cell(value: Any) -> Any:
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return value


def export_to_csv(rows: List[Dict[str, Any]], output_path: str,
                  fieldnames: Optional[Sequence[str]] = None) -> str:
    """
    Export flat rows to CSV format.

    Args:
        rows: One dict per row
        output_path: Path to save CSV file
        fieldnames: Column order (defaults to the keys of the first row)

    Returns:
        Path to created CSV file
    """
    if not rows:
        raise ValueError("No rows to export")

    output_file = Path(output_path)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    fieldnames = list(fieldnames or rows[0].keys())

    with open(output_file, 'w', newline='', encoding='utf-8') as csvfile:
        writer = csv.DictWriter(csvfile, fieldnames=fieldnames, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _format_cell(row.get(key)) for key in fieldnames})

    return str(output_file)


def format_metric(value: Optional[float], digits: int = 2) -> str:
    return 'n/a' if value is None else f"{value:.{digits}f}"


def export_to_html(table: Dict[str, Any], output_path: str) -> str:
    """
    Export a suite comparison table to an HTML page.

    Args:
        table: Suite table as built by the orchestrator (suite, metric, columns, rows)
        output_path: Path to save HTML file

    Returns:
        Path to created HTML file
    """
    if not table.get('rows'):
        raise ValueError("No rows to export")

    output_file = Path(output_path)
    output_file.parent.mkdir(parents=True, exist_ok=True)

    with open(output_file, 'w', encoding='utf-8') as f:
        f.write(generate_html_report(table))

    return str(output_file)


def generate_html_report(table: Dict[str, Any]) -> str:
    """Generate HTML report content."""
    timestamp = datetime.now().strftime('%Y-%m-%d %H:%M:%S')
    suite = table.get('suite', 'suite')
    columns = table['columns']
    rows = table['rows']
    primary = table.get('metric', columns[0])

    present = [r for r in rows if r.get(primary) is not None]
    best = max(present, key=lambda r: r[primary])['method'] if present else 'n/a'

    html = f"""<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <title>Separation Results - {suite}</title>
    <style>
        body {{
            font-family: 'Segoe UI', Tahoma, Geneva, Verdana, sans-serif;
            color: #333;
            max-width: 1000px;
            margin: 0 auto;
            padding: 20px;
            background-color: #f5f5f5;
        }}
        .header {{
            background: linear-gradient(135deg, #667eea 0%, #764ba2 100%);
            color: white;
            padding: 30px;
            border-radius: 10px;
            margin-bottom: 30px;
        }}
        .header h1 {{ margin: 0 0 10px 0; }}
        .header .timestamp {{ opacity: 0.9; font-size: 0.9em; }}
        table {{
            width: 100%;
            border-collapse: collapse;
            background: white;
            box-shadow: 0 2px 4px rgba(0,0,0,0.1);
        }}
        th, td {{ padding: 10px 15px; text-align: right; border-bottom: 1px solid #eee; }}
        th:first-child, td:first-child {{ text-align: left; }}
        th {{ background-color: #f8f9fa; }}
        tr.best td {{ font-weight: bold; color: #27ae60; }}
        .footer {{ text-align: center; margin-top: 40px; color: #666; font-size: 0.9em; }}
    </style>
</head>
<body>
    <div class="header">
        <h1>Suite: {suite}</h1>
        <div class="timestamp">Generated: {timestamp} | Primary metric: {primary} | Best: {best}</div>
    </div>
    <table>
        <tr><th>Method</th>{''.join(f'<th>{c}</th>' for c in columns)}</tr>
"""
    for row in rows:
        css = ' class="best"' if row['method'] == best else ''
        cells = ''.join(f"<td>{format_metric(row.get(c))}</td>" for c in columns)
        html += f"        <tr{css}><td>{row['method']}</td>{cells}</tr>\n"

    html += """    </table>
    <div class="footer">
        <p>eggsep - semi-supervised separation laboratory</p>
    </div>
</body>
</html>
"""
    return html
