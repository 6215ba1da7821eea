"""
Excel export for simulation sweeps and capacity surfaces
"""

import math
import os
from typing import List, Dict, Sequence, Optional
from openpyxl import Workbook
from openpyxl.styles import Font, Alignment, PatternFill
from openpyxl.utils import get_column_letter
from config import CSV_COLUMNS, SURFACE_COLUMNS, OUTPUT_FOLDER

PER_CODEBOOK_COLUMNS = ['codebook'] + CSV_COLUMNS + ['encoder_atypical']


class ReportWorkbook:
    def __init__(self, output_folder: str = OUTPUT_FOLDER):
        self.output_folder = output_folder
        self.ensure_output_directory()

    def ensure_output_directory(self):
        """Ensure output directory exists"""
        os.makedirs(self.output_folder, exist_ok=True)

    def _resolve(self, filename: str) -> str:
        if not filename.endswith('.xlsx'):
            filename += '.xlsx'
        if os.path.dirname(filename):
            os.makedirs(os.path.dirname(filename), exist_ok=True)
            return filename
        return os.path.join(self.output_folder, filename)

    def export_sweep(self, averaged, per_codebook, summary: Dict, filename: str) -> str:
        """
        Write a simulation sweep: averages per n, every codebook draw, and a summary sheet.

        Args:
            averaged: averaged SimReports, one per blocklength
            per_codebook: SimReports of every codebook draw
            summary: metric name to value
            filename: target file (placed in the output folder if it has no directory)

        Returns:
            path of the saved workbook
        """
        filepath = self._resolve(filename)
        wb = Workbook()

        ws = wb.active
        ws.title = "Sweep Averages"
        self._add_headers(ws, CSV_COLUMNS)
        self._add_rows(ws, [self._report_cells(r) for r in averaged])

        ws = wb.create_sheet("Codebooks")
        self._add_headers(ws, PER_CODEBOOK_COLUMNS)
        self._add_rows(ws, [[r.codebook_index] + self._report_cells(r) + [r.encoder_atypical]
                            for r in per_codebook])

        self._create_summary_sheet(wb, summary)
        wb.save(filepath)
        return filepath

    def export_surface(self, points, summary: Dict, filename: str) -> str:
        """Write a C(A,B) grid and a summary sheet."""
        filepath = self._resolve(filename)
        wb = Workbook()
        ws = wb.active
        ws.title = "Surface"
        self._add_headers(ws, SURFACE_COLUMNS)
        self._add_rows(ws, [[p.A, p.B, p.value_bits] for p in points])
        self._create_summary_sheet(wb, summary)
        wb.save(filepath)
        return filepath

    @staticmethod
    def _report_cells(report) -> List:
        return [
            report.n,
            report.realized_R,
            report.realized_RK,
            report.realized_Rprime,
            'NA' if report.p_err is None else report.p_err,
            'NA' if report.p_err_halfwidth is None else report.p_err_halfwidth,
            report.kl_nats,
            report.tv,
            report.detection_bound,
            report.exactness,
        ]

    def _add_headers(self, ws, headers: Sequence[str], width: Optional[int] = 16):
        """Add styled headers to worksheet"""
        header_font = Font(bold=True, color="FFFFFF")
        header_fill = PatternFill(start_color="366092", end_color="366092", fill_type="solid")
        header_alignment = Alignment(horizontal="center", vertical="center")

        for col, header in enumerate(headers, 1):
            cell = ws.cell(row=1, column=col, value=header)
            cell.font = header_font
            cell.fill = header_fill
            cell.alignment = header_alignment
            ws.column_dimensions[get_column_letter(col)].width = max(width, len(header) + 2)

    @staticmethod
    def _cell(value):
        # Excel has no inf or NaN
        if isinstance(value, float) and not math.isfinite(value):
            return 'NA' if math.isnan(value) else ('inf' if value > 0 else '-inf')
        return value

    def _add_rows(self, ws, rows: List[List]):
        for row, values in enumerate(rows, 2):
            for col, value in enumerate(values, 1):
                ws.cell(row=row, column=col, value=self._cell(value))

    def _create_summary_sheet(self, wb, summary: Dict):
        """Create summary sheet"""
        ws = wb.create_sheet("Summary")
        summary_data = [["Metric", "Value"]] + [[k, v] for k, v in summary.items()]
        for row, (metric, value) in enumerate(summary_data, 1):
            if isinstance(value, (list, tuple, dict)):
                value = str(value)
            value = self._cell(value)
            ws.cell(row=row, column=1, value=metric)
            ws.cell(row=row, column=2, value=value)

        for cell in ws[1]:
            cell.font = Font(bold=True)
        ws.column_dimensions['A'].width = 30
        ws.column_dimensions['B'].width = 40
