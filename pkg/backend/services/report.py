import os

import pandas as pd
from reportlab.lib import colors
from reportlab.lib.pagesizes import landscape, letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import BaseDocTemplate, Frame, PageTemplate, Paragraph, Spacer, Table, TableStyle

from utils.logger import get_logger

logger = get_logger(__name__)

# ── Color Scheme ───────────────────────────────────────────────────────────────
COLOR_FOREGROUND = colors.HexColor('#764b2d')
COLOR_PRIMARY    = colors.HexColor('#de8a4e')
COLOR_NOTEBOOK   = colors.HexColor('#efe5dc')
COLOR_ACCENT     = colors.HexColor('#000000')
COLOR_PAPER      = colors.HexColor('#ffffff')

HEADERS = {
    "method": "Method",
    "capacity": "|S|max",
    "n_seeds": "Seeds",
    "cum_total_score": "Total score",
    "cum_avg_client_quality": "Client quality",
    "cum_avg_coalition_quality": "Coalition quality",
    "cum_avg_client_payoff": "Client payoff",
    "cum_avg_client_utility": "Client utility",
    "test_accuracy": "Accuracy",
    "accuracy_gap": "Accuracy gap",
    "total_score": "Total score",
    "avg_client_quality": "Client quality",
    "avg_coalition_quality": "Coalition quality",
    "avg_client_utility": "Client utility",
}


def draw_page(canvas, doc):
    width, height = doc.pagesize
    canvas.saveState()
    canvas.setFillColor(COLOR_PAPER)
    canvas.rect(0, 0, width, height, fill=1, stroke=0)
    # Header band
    canvas.setFillColor(COLOR_PRIMARY)
    canvas.rect(0, height - 0.5*inch, width, 0.5*inch, fill=1, stroke=0)
    canvas.setFillColor(COLOR_PAPER)
    canvas.setFont("Helvetica-Bold", 14)
    canvas.drawString(inch, height - 0.35*inch, "DualGFL • Experiment Summary")
    # Footer band; no timestamp so reruns render identical bytes
    canvas.setFillColor(COLOR_NOTEBOOK)
    canvas.rect(0, 0, width, 0.3*inch, fill=1, stroke=0)
    canvas.setFillColor(COLOR_FOREGROUND)
    canvas.setFont("Helvetica-Oblique", 8)
    canvas.drawCentredString(width/2, 0.1*inch, doc.footer_text)
    canvas.restoreState()


def _format(value) -> str:
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def make_metrics_table(frame: pd.DataFrame, styles, content_width):
    """Render a summary frame with one column per metric."""
    columns = list(frame.columns)
    data = [[Paragraph(f"<b>{HEADERS.get(c, c)}</b>", styles['CustomBody']) for c in columns]]
    for _, row in frame.iterrows():
        data.append([_format(row[c]) for c in columns])
    tbl = Table(data, colWidths=[content_width / len(columns)] * len(columns), hAlign='LEFT')
    tbl.setStyle(TableStyle([
        ('BACKGROUND',      (0, 0), (-1, 0), COLOR_NOTEBOOK),
        ('TEXTCOLOR',       (0, 1), (-1, -1), COLOR_FOREGROUND),
        ('BOX',             (0, 0), (-1, -1), 1, COLOR_ACCENT),
        ('INNERGRID',       (0, 0), (-1, -1), 0.25, COLOR_FOREGROUND),
        ('FONTSIZE',        (0, 1), (-1, -1), 9),
        ('TOPPADDING',      (0, 0), (-1, -1), 4),
        ('BOTTOMPADDING',   (0, 0), (-1, -1), 4),
    ]))
    return tbl


def generate_summary_report(summary: pd.DataFrame, output_path: str, seeds, ablation: pd.DataFrame | None = None) -> str:
    """Write the per-method summary (and the capacity ablation, if any) as a PDF."""
    os.makedirs(os.path.dirname(os.path.abspath(output_path)), exist_ok=True)

    doc = BaseDocTemplate(output_path, pagesize=landscape(letter),
                          rightMargin=0.75*inch, leftMargin=0.75*inch,
                          topMargin=inch, bottomMargin=inch, invariant=1)
    doc.footer_text = f"Seeds: {', '.join(str(s) for s in seeds)}"
    frame = Frame(doc.leftMargin, doc.bottomMargin, doc.width, doc.height, id='main')
    doc.addPageTemplates([PageTemplate(id='pt', frames=[frame], onPage=draw_page)])

    styles = getSampleStyleSheet()
    styles.add(ParagraphStyle('CustomTitle',
                              parent=styles['Heading1'],
                              fontName='Helvetica-Bold',
                              fontSize=20,
                              textColor=COLOR_PRIMARY,
                              spaceAfter=18))
    styles.add(ParagraphStyle('CustomBody',
                              parent=styles['BodyText'],
                              fontName='Helvetica',
                              fontSize=9,
                              leading=11,
                              textColor=COLOR_FOREGROUND))

    story = [Paragraph("Cumulative averages at the final round, mean over seeds", styles['CustomTitle']),
             make_metrics_table(summary, styles, doc.width)]
    if ablation is not None and not ablation.empty:
        raw = [c for c in ablation.columns if not c.endswith("_normalized")]
        story += [Spacer(1, 0.3*inch),
                  Paragraph("Capacity ablation", styles['CustomTitle']),
                  make_metrics_table(ablation[raw], styles, doc.width)]

    doc.build(story)
    logger.info("Wrote summary report to %s", output_path)
    return output_path
