"""
Excel report generation using openpyxl.
"""

from pathlib import Path

from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

from apps.core.utils import get_setting


class BaseExcelReport:
    """Base class for Excel report generation."""

    def __init__(self, title):
        self.title = title
        self.wb = Workbook()
        self._setup_styles()

    def _setup_styles(self):
        """Set up reusable styles."""
        self.header_font = Font(bold=True, color="FFFFFF", size=11)
        self.header_fill = PatternFill(start_color="4F46E5", end_color="4F46E5", fill_type="solid")
        self.header_alignment = Alignment(horizontal="center", vertical="center")

        self.title_font = Font(bold=True, size=16)
        self.subtitle_font = Font(size=12, color="666666")

        thin_border = Side(style='thin', color='E5E7EB')
        self.cell_border = Border(left=thin_border, right=thin_border, top=thin_border, bottom=thin_border)

        self.alt_row_fill = PatternFill(start_color="F8F9FA", end_color="F8F9FA", fill_type="solid")
        # Diagonal of the confusion sheet
        self.hit_fill = PatternFill(start_color="D1FAE5", end_color="D1FAE5", fill_type="solid")

    def create_worksheet(self, name):
        """Create a new worksheet, reusing the default sheet first."""
        if self.wb.active and self.wb.active.title == "Sheet":
            ws = self.wb.active
            ws.title = name
        else:
            ws = self.wb.create_sheet(name)
        return ws

    def add_title(self, ws, title, row=1):
        ws.cell(row=row, column=1, value=title).font = self.title_font
        return row + 1

    def add_subtitle(self, ws, subtitle, row=2):
        ws.cell(row=row, column=1, value=subtitle).font = self.subtitle_font
        return row + 1

    def add_header_row(self, ws, headers, row):
        """Add a styled header row."""
        for col, header in enumerate(headers, 1):
            cell = ws.cell(row=row, column=col, value=header)
            cell.font = self.header_font
            cell.fill = self.header_fill
            cell.alignment = self.header_alignment
            cell.border = self.cell_border
        return row + 1

    def add_data_row(self, ws, data, row, is_alternate=False):
        for col, value in enumerate(data, 1):
            cell = ws.cell(row=row, column=col, value=value)
            cell.border = self.cell_border
            if is_alternate:
                cell.fill = self.alt_row_fill
        return row + 1

    def auto_adjust_columns(self, ws):
        """Auto-adjust column widths."""
        for column_cells in ws.columns:
            length = max(len(str(cell.value or "")) for cell in column_cells)
            ws.column_dimensions[get_column_letter(column_cells[0].column)].width = min(length + 2, 50)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.wb.save(path)
        return path


class EvaluationExcelReport(BaseExcelReport):
    """Metrics, per-class AP and confusion matrix of one evaluation run."""

    def __init__(self, report):
        super().__init__("Evaluation Report")
        self.report = report
        self._create_metrics_sheet()
        if report.class_aps:
            self._create_class_sheet()
        if report.confusion is not None:
            self._create_confusion_sheet()

    def _create_metrics_sheet(self):
        ws = self.create_worksheet("Metrics")
        row = self.add_title(ws, self.title)
        if self.report.mean_ap is not None or self.report.global_iou is not None:
            row = self.add_subtitle(ws, get_setting("METRIC_CONVENTIONS", ""), row)
        row = self.add_header_row(ws, ["Metric", "Value"], row + 1)
        for i, (name, value) in enumerate(self.report.metric_rows()):
            row = self.add_data_row(ws, [name, value], row, is_alternate=i % 2 == 1)
        self.auto_adjust_columns(ws)

    def _create_class_sheet(self):
        ws = self.create_worksheet("Classes")
        row = self.add_header_row(ws, ["Class", "AP", "TP", "FP", "FN"], 1)
        for i, result in enumerate(self.report.class_aps):
            data = [self.report.class_name(result.label), result.ap, result.true_positives,
                    result.false_positives, result.false_negatives]
            row = self.add_data_row(ws, data, row, is_alternate=i % 2 == 1)
        self.auto_adjust_columns(ws)

    def _create_confusion_sheet(self):
        matrix = self.report.confusion
        ws = self.create_worksheet("Confusion")
        row = self.add_header_row(ws, ["truth \\ pred", *matrix.class_names, "total"], 1)
        for i, (name, counts) in enumerate(zip(matrix.class_names, matrix.counts.tolist())):
            self.add_data_row(ws, [name, *counts, sum(counts)], row)
            ws.cell(row=row, column=i + 2).fill = self.hit_fill
            row += 1
        self.auto_adjust_columns(ws)
