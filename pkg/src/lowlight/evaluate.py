"""Directory-level metric evaluation with CSV and markdown reports.

Full-reference metrics (PSNR, SSIM, feature distance) run only when a
reference directory with matching filenames is supplied; the naturalness
score runs whenever model parameters are available. The CSV schema is fixed:
``filename,psnr,ssim,perc_dist,niqe`` with a final ``mean`` row.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .errors import NotFoundError, PairingError
from .imaging import IMAGE_SUFFIXES, load_image
from .metrics import perceptual_distance, psnr, ssim
from .niqe import niqe

CSV_HEADER = ("filename", "psnr", "ssim", "perc_dist", "niqe")

# column captions mirror the usual reporting order and direction arrows
MARKDOWN_COLUMNS = (
    ("psnr", "PSNR↑"),
    ("ssim", "SSIM↑"),
    ("perc_dist", "LPIPS-like↓"),
    ("niqe", "NIQE↓"),
)


@dataclass
class MetricRow:
    filename: str
    psnr: float | None = None
    ssim: float | None = None
    perc_dist: float | None = None
    niqe: float | None = None


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    has_reference: bool = False

    def means(self):
        out = {}
        for key in ("psnr", "ssim", "perc_dist", "niqe"):
            vals = [getattr(r, key) for r in self.rows if getattr(r, key) is not None]
            out[key] = sum(vals) / len(vals) if vals else None
        return out


def _list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise NotFoundError(f"directory not found: {directory}")
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def evaluate_dir(enhanced_dir, reference_dir=None, extractor=None, ns_params=None):
    """Score every image in a directory, pairing by filename when references exist."""
    enhanced = _list_images(enhanced_dir)
    if not enhanced:
        raise NotFoundError(f"no images in {enhanced_dir}")
    references = {}
    if reference_dir is not None:
        ref_paths = {p.name: p for p in _list_images(reference_dir)}
        missing = [p.name for p in enhanced if p.name not in ref_paths]
        extra = [name for name in ref_paths if name not in {p.name for p in enhanced}]
        if missing or extra:
            raise PairingError(
                f"enhanced/reference filenames do not match "
                f"(unmatched enhanced: {missing}; unmatched references: {extra})",
                offenders=missing + extra,
            )
        references = ref_paths

    report = MetricReport(has_reference=bool(references))
    for path in enhanced:
        img = load_image(path)
        row = MetricRow(filename=path.name)
        if references:
            ref = load_image(references[path.name])
            row.psnr = psnr(img, ref)
            row.ssim = ssim(img, ref)
            if extractor is not None:
                row.perc_dist = perceptual_distance(extractor, img, ref)
        if ns_params is not None:
            row.niqe = niqe(img, ns_params)
        report.rows.append(row)
    return report


def _fmt(value):
    return "" if value is None else f"{value:.6f}"


def write_csv(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in report.rows:
            writer.writerow(
                [row.filename, _fmt(row.psnr), _fmt(row.ssim), _fmt(row.perc_dist), _fmt(row.niqe)]
            )
        means = report.means()
        writer.writerow(
            ["mean", _fmt(means["psnr"]), _fmt(means["ssim"]),
             _fmt(means["perc_dist"]), _fmt(means["niqe"])]
        )
    return Path(path)


def to_markdown(report):
    header = "| Image | " + " | ".join(cap for _, cap in MARKDOWN_COLUMNS) + " |"
    rule = "|" + "---|" * (len(MARKDOWN_COLUMNS) + 1)
    lines = [header, rule]
    for row in report.rows:
        cells = [_fmt(getattr(row, key)) or "-" for key, _ in MARKDOWN_COLUMNS]
        lines.append("| " + " | ".join([row.filename, *cells]) + " |")
    means = report.means()
    cells = [_fmt(means[key]) or "-" for key, _ in MARKDOWN_COLUMNS]
    lines.append("| **mean** | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_markdown(report, path):
    Path(path).write_text(to_markdown(report))
    return Path(path)
