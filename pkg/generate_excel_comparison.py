#!/usr/bin/env python3
"""
Generate Excel workbook comparing the simulated policies of a scenario.
One sheet per run with the aggregate series, plus a dashboard and a help sheet.
"""

import sys
from pathlib import Path
from typing import Dict, Optional

import pandas as pd
from openpyxl.styles import Alignment, Font, PatternFill

from log_setup import get_logger

logger = get_logger(__name__)

MAX_SHEET_NAME = 31

HELP_ROWS = [
    ["Question", "Answer"],
    ["What is in each run sheet?", "Population-weighted totals per output time: active (asymptomatic plus symptomatic), cumulative (active, quarantined and recovered), quarantined and recovered."],
    ["How are the quarantine policies compared?", "Every comparison policy is scaled to the same total economic cost as the optimal policy, so differences come only from where quarantine effort is spent."],
    ["What does lambda_max mean?", "The dominant eigenvalue of the linearized infection matrix at the reference date. Negative values mean infections decay; -ln(2)/30 halves active cases every 30 days."],
    ["What is R0 here?", "The spectral radius of the next-generation matrix under the policy. R0 <= 1 exactly when lambda_max <= 0."],
    ["What is the travel sweep?", "For each l1 budget on travel-rate changes, the smallest dominant eigenvalue found by projected gradient descent. Larger budgets never give larger values."],
    ["Why is a halving time missing?", "Active infections were not decaying over the final third of the horizon, so no halving time exists."],
]


def _autosize(worksheet, limit: int = 50):
    for column in worksheet.columns:
        max_length = max((len(str(cell.value)) for cell in column if cell.value is not None), default=0)
        worksheet.column_dimensions[column[0].column_letter].width = min(max_length + 2, limit)


def _sheet_name(label: str, used: set) -> str:
    name = "".join("_" if ch in "[]:*?/\\" else ch for ch in label)[:MAX_SHEET_NAME]
    base, k = name, 2
    while name in used:
        suffix = f"~{k}"
        name = base[:MAX_SHEET_NAME - len(suffix)] + suffix
        k += 1
    used.add(name)
    return name


def _dashboard(summary: Dict) -> pd.DataFrame:
    rows = []
    for label, row in summary.get("policies", {}).items():
        rows.append({
            "Run": label,
            "Cost": row.get("cost"),
            "lambda_max": row.get("lambda_max"),
            "R0": row.get("r0"),
            "Halving time (days)": row.get("halving_time_days"),
            "Final active": row.get("final_active"),
            "Final cumulative": row.get("final_cumulative"),
        })
    return pd.DataFrame(rows)


def create_excel_comparison(aggregates: Dict[str, pd.DataFrame], output_file: Path,
                            summary: Optional[Dict] = None) -> Path:
    """Write one sheet per aggregate frame; returns the workbook path"""
    output_file = Path(output_file)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    used: set = set()
    sheets_created = 0

    with pd.ExcelWriter(output_file, engine="openpyxl") as writer:
        if summary:
            dashboard = _dashboard(summary)
            if not dashboard.empty:
                name = _sheet_name("Summary Dashboard", used)
                dashboard.to_excel(writer, sheet_name=name, index=False)
                _autosize(writer.sheets[name], limit=30)
                sheets_created += 1

            sweep = summary.get("travel_sweep") or []
            if sweep:
                name = _sheet_name("Travel Sweep", used)
                pd.DataFrame(sweep)[["budget", "f_star", "iterations", "converged"]].to_excel(
                    writer, sheet_name=name, index=False)
                _autosize(writer.sheets[name])
                sheets_created += 1

        for label, frame in aggregates.items():
            name = _sheet_name(label, used)
            frame.to_excel(writer, sheet_name=name, index=False)
            worksheet = writer.sheets[name]
            _autosize(worksheet)
            worksheet.auto_filter.ref = worksheet.dimensions
            worksheet.freeze_panes = "A2"
            sheets_created += 1
            logger.debug(f"sheet '{name}' ({len(frame)} rows)")

        name = _sheet_name("FAQ and Help", used)
        pd.DataFrame(HELP_ROWS).to_excel(writer, sheet_name=name, index=False, header=False)
        worksheet = writer.sheets[name]
        header_fill = PatternFill(start_color="366092", end_color="366092", fill_type="solid")
        for col in (1, 2):
            cell = worksheet.cell(row=1, column=col)
            cell.font = Font(bold=True, size=12, color="FFFFFF")
            cell.fill = header_fill
            cell.alignment = Alignment(horizontal="center")
        for row in range(2, len(HELP_ROWS) + 1):
            question = worksheet.cell(row=row, column=1)
            question.font = Font(bold=True, size=10)
            question.alignment = Alignment(horizontal="left", vertical="top", wrap_text=True)
            answer = worksheet.cell(row=row, column=2)
            answer.font = Font(size=10)
            answer.alignment = Alignment(horizontal="left", vertical="top", wrap_text=True)
            worksheet.row_dimensions[row].height = 45
        worksheet.column_dimensions["A"].width = 40
        worksheet.column_dimensions["B"].width = 80
        sheets_created += 1

    logger.info(f"workbook {output_file} with {sheets_created} sheets")
    return output_file


if __name__ == "__main__":
    if len(sys.argv) != 2:
        print("Usage: python3 generate_excel_comparison.py <results_dir>")
        sys.exit(1)

    results = Path(sys.argv[1])
    frames = {path.stem.replace("aggregate_", ""): pd.read_csv(path)
              for path in sorted(results.glob("aggregate_*.csv"))}
    if not frames:
        print(f"❌ No aggregate CSVs found in {results}")
        sys.exit(1)
    workbook = create_excel_comparison(frames, results / "results.xlsx")
    print(f"✅ Excel workbook created: {workbook}")
