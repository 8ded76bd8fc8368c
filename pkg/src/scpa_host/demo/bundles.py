"""Materializes the sample unit sources as deployable bundles.

Each bundle directory holds ``manifest.scpa`` plus the payload file, with
the checksum computed from the payload bytes at build time.
"""

from __future__ import annotations

from pathlib import Path

from ..contract import (
    Layer,
    LayerBinding,
    MANIFEST_FILENAME,
    Manifest,
    payload_checksum,
    serialize_manifest,
)

UNITS_SRC = Path(__file__).parent / "units_src"

SALES_UNIT = "sales-by-product"
ROUNDING_UNIT = "price-rounding-fix"

_SAMPLE_UNITS = (
    {
        "name": SALES_UNIT,
        "version": "1.0.0",
        "priority": 100,
        "source": UNITS_SRC / "sales_by_product" / "payload.py",
        "description": "Per-product sales totals across the data, business, and UI layers",
        "bindings": (
            LayerBinding(Layer.DATA, "data.sales.read", "read_sales"),
            LayerBinding(Layer.BUSINESS, "business.sales.compute", "compute_totals"),
            LayerBinding(Layer.UI, "ui.product.render", "render_sales_column"),
        ),
    },
    {
        "name": ROUNDING_UNIT,
        "version": "1.0.0",
        "priority": 200,
        "source": UNITS_SRC / "price_rounding_fix" / "payload_1_0_0.py",
        "description": "Formats sales totals to cents (truncating)",
        "bindings": (
            LayerBinding(Layer.BUSINESS, "business.sales.compute", "round_totals"),
        ),
    },
    {
        "name": ROUNDING_UNIT,
        "version": "1.0.1",
        "priority": 200,
        "source": UNITS_SRC / "price_rounding_fix" / "payload_1_0_1.py",
        "description": "Formats sales totals to cents (rounding half-up)",
        "bindings": (
            LayerBinding(Layer.BUSINESS, "business.sales.compute", "round_totals"),
        ),
    },
)


def build_bundle(
    dest: Path,
    *,
    name: str,
    version: str,
    priority: int,
    source: Path,
    bindings,
    description: str | None = None,
    reentrant: bool = True,
) -> Path:
    """Write one standalone bundle directory (manifest + payload) to dest."""
    payload = Path(source).read_bytes()
    manifest = Manifest(
        name=name,
        version=version,
        priority=priority,
        reentrant=reentrant,
        bindings=tuple(bindings),
        payload_ref="payload.py",
        checksum=payload_checksum(payload),
        description=description,
    )
    bundle_dir = Path(dest)
    bundle_dir.mkdir(parents=True, exist_ok=True)
    (bundle_dir / "payload.py").write_bytes(payload)
    (bundle_dir / MANIFEST_FILENAME).write_text(
        serialize_manifest(manifest), encoding="utf-8"
    )
    return bundle_dir


def build_demo_bundles(dest: Path) -> dict[tuple[str, str], Path]:
    """Build every sample bundle under dest as ``<name>-<version>/``."""
    dest = Path(dest)
    built: dict[tuple[str, str], Path] = {}
    for spec in _SAMPLE_UNITS:
        bundle_dir = dest / f"{spec['name']}-{spec['version']}"
        build_bundle(
            bundle_dir,
            name=spec["name"],
            version=spec["version"],
            priority=spec["priority"],
            source=spec["source"],
            bindings=spec["bindings"],
            description=spec["description"],
        )
        built[(spec["name"], spec["version"])] = bundle_dir
    return built
