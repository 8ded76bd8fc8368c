"""Demo layered application and shippable sample pipeline units."""

from .app import (
    COMPUTE_EP,
    DemoApp,
    EXTENSION_POINTS,
    FIXTURES_DIR,
    GOLDEN_DIR,
    ProductRecord,
    READ_EP,
    RENDER_EP,
    SaleRecord,
    build_demo_artifact,
    load_products,
    load_sales,
    render_table,
    start_demo,
)
from .bundles import ROUNDING_UNIT, SALES_UNIT, build_bundle, build_demo_bundles

__all__ = [
    "COMPUTE_EP",
    "DemoApp",
    "EXTENSION_POINTS",
    "FIXTURES_DIR",
    "GOLDEN_DIR",
    "ProductRecord",
    "READ_EP",
    "RENDER_EP",
    "ROUNDING_UNIT",
    "SALES_UNIT",
    "SaleRecord",
    "build_bundle",
    "build_demo_artifact",
    "build_demo_bundles",
    "load_products",
    "load_sales",
    "render_table",
    "start_demo",
]
