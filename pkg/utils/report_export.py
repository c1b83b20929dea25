from typing import Dict, Optional
import io

import numpy as np
import pandas as pd
from fpdf import FPDF

from .metrics import REPORT_COLUMNS, MetricsReport


def summarise_report(report: MetricsReport) -> pd.DataFrame:
    """Mean of each numeric column per method, phases pooled."""
    df = report.to_frame()
    numeric = [c for c in REPORT_COLUMNS if c not in ("method", "phase")]
    return df.groupby("method", sort=False)[numeric].mean().reset_index()


def build_excel_from_report(report: MetricsReport, settings: Optional[Dict[str, str]] = None) -> bytes:
    """Excel workbook with the per-phase metrics, a per-method summary and the run settings."""
    buffer = io.BytesIO()

    with pd.ExcelWriter(buffer, engine="openpyxl") as writer:
        report.to_frame().to_excel(writer, sheet_name="Metrics", index=False)
        summarise_report(report).to_excel(writer, sheet_name="Summary", index=False)
        if settings:
            pd.DataFrame(
                [{"Setting": k, "Value": v} for k, v in settings.items()]
            ).to_excel(writer, sheet_name="Settings", index=False)

    buffer.seek(0)
    return buffer.getvalue()


def _fmt(value, digits: int = 3) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "-"
    if isinstance(value, float):
        return "inf" if np.isinf(value) else f"{value:.{digits}f}"
    return str(value)


def render_report_to_pdf(report: MetricsReport, settings: Optional[Dict[str, str]] = None,
                         title: str = "Cine Reconstruction Quality Report") -> bytes:
    """One-page PDF: run settings, then a metrics table per method and phase."""
    pdf = FPDF()
    pdf.set_auto_page_break(auto=True, margin=15)
    pdf.add_page()

    # Effective page width (A4 minus margins)
    epw = pdf.w - 2 * pdf.l_margin

    pdf.set_font("Arial", "B", 16)
    pdf.cell(0, 10, title, ln=True)

    if settings:
        pdf.ln(4)
        pdf.set_font("Arial", "B", 14)
        pdf.cell(0, 8, "Settings", ln=True)
        pdf.set_font("Arial", "", 11)
        for key, value in settings.items():
            pdf.set_x(pdf.l_margin)
            pdf.multi_cell(epw, 6, f"{key}: {value}")

    # Metrics table
    pdf.ln(8)
    pdf.set_font("Arial", "B", 14)
    pdf.cell(0, 8, "Metrics", ln=True)
    pdf.ln(2)

    columns = [("method", 32), ("phase", 22), ("snr_db", 22), ("es_mean", 22),
               ("nrmse", 22), ("psnr_db", 22)]
    pdf.set_font("Arial", "B", 9)
    for name, width in columns:
        pdf.cell(width, 6, name, border=1)
    pdf.ln()

    pdf.set_font("Arial", "", 9)
    for row in report.rows:
        for name, width in columns:
            pdf.cell(width, 6, _fmt(row.get(name))[:18], border=1)
        pdf.ln()

    pdf.ln(8)
    pdf.set_font("Arial", "I", 10)
    pdf.set_x(pdf.l_margin)
    pdf.multi_cell(
        epw,
        5,
        "SNR in dB from 5x5 ROIs (LV blob centre vs background). Edge sharpness is the mean "
        "inverse 20-80% rise distance (1/mm) over six radial profiles. NRMSE and PSNR are "
        "computed on magnitudes against the noiseless phantom when it is available.",
    )

    return bytes(pdf.output())
