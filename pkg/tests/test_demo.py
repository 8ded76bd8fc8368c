"""Demo app: golden outputs per drop-folder state, unit arithmetic,
self-containment of the app build."""

import io
import shutil
from decimal import Decimal
from pathlib import Path

import pytest

from scpa_host.cli import main
from scpa_host.contract import HostContext, make_envelope
from scpa_host.demo import (
    COMPUTE_EP,
    FIXTURES_DIR,
    GOLDEN_DIR,
    build_demo_artifact,
    build_demo_bundles,
    load_products,
    load_sales,
    render_table,
    start_demo,
)
from scpa_host.demo.app import FixtureError
from scpa_host.loading import payload_unit_factory
from scpa_host.registry import scan

import scpa_host


@pytest.fixture
def demo_env(tmp_path):
    bundles = build_demo_bundles(tmp_path / "bundles")
    drop = tmp_path / "drop"
    drop.mkdir()
    app = start_demo(drop, scan_interval_ms=60_000, diagnostics=io.StringIO())
    yield app, bundles, drop
    app.host.stop()


def deploy(bundles, key, drop):
    assert main(["deploy", str(bundles[key]), "--drop-dir", str(drop)]) == 0


def golden(name: str) -> str:
    return (GOLDEN_DIR / name).read_text()


class TestFixtures:
    def test_products_load(self):
        products = load_products(FIXTURES_DIR / "products.csv")
        assert [p.id for p in products] == ["p1", "p2", "p3"]
        assert products[0].price == Decimal("10.0")

    def test_sales_load_and_validate(self):
        products = load_products(FIXTURES_DIR / "products.csv")
        sales = load_sales(FIXTURES_DIR / "sales.csv", products)
        assert len(sales) == 5
        assert {s.product_id for s in sales} == {"p1", "p2", "p3"}

    def test_sales_reject_unknown_product(self, tmp_path):
        products = load_products(FIXTURES_DIR / "products.csv")
        bad = tmp_path / "sales.csv"
        bad.write_text("product_id,quantity,date\nghost,1,2024-01-01\n")
        with pytest.raises(FixtureError, match="unknown product"):
            load_sales(bad, products)

    def test_negative_quantity_rejected(self, tmp_path):
        products = load_products(FIXTURES_DIR / "products.csv")
        bad = tmp_path / "sales.csv"
        bad.write_text("product_id,quantity,date\np1,-2,2024-01-01\n")
        with pytest.raises(FixtureError):
            load_sales(bad, products)

    def test_duplicate_product_id_rejected(self, tmp_path):
        bad = tmp_path / "products.csv"
        bad.write_text("id,name,price\np1,a,1\np1,b,2\n")
        with pytest.raises(FixtureError, match="duplicate"):
            load_products(bad)


class TestGoldenStates:
    def test_baseline_without_units(self, demo_env):
        app, _, _ = demo_env
        assert app.render() == golden("baseline.txt")

    def test_sales_unit_adds_column(self, demo_env):
        app, bundles, drop = demo_env
        deploy(bundles, ("sales-by-product", "1.0.0"), drop)
        app.host.hot_swap_cycle()
        assert app.render() == golden("sales.txt")

    def test_sales_plus_fix_states(self, demo_env):
        app, bundles, drop = demo_env
        deploy(bundles, ("sales-by-product", "1.0.0"), drop)
        deploy(bundles, ("price-rounding-fix", "1.0.0"), drop)
        app.host.hot_swap_cycle()
        assert app.render() == golden("sales_fix_1_0_0.txt")
        deploy(bundles, ("price-rounding-fix", "1.0.1"), drop)
        app.host.hot_swap_cycle()
        assert app.render() == golden("sales_fix_1_0_1.txt")

    def test_unit_removal_restores_baseline_bytes(self, demo_env):
        app, bundles, drop = demo_env
        deploy(bundles, ("sales-by-product", "1.0.0"), drop)
        app.host.hot_swap_cycle()
        assert app.render() == golden("sales.txt")
        shutil.rmtree(drop / "sales-by-product")
        app.host.hot_swap_cycle()
        assert app.render() == golden("baseline.txt")

    def test_disable_mid_run_drops_column(self, demo_env):
        app, bundles, drop = demo_env
        deploy(bundles, ("sales-by-product", "1.0.0"), drop)
        app.host.hot_swap_cycle()
        assert "total_sales" in app.render()
        assert main(["disable", "sales-by-product", "--drop-dir", str(drop)]) == 0
        app.host.hot_swap_cycle()
        assert app.render() == golden("baseline.txt")

    def test_missing_sales_fixture_keeps_baseline(self, demo_env, tmp_path):
        app, bundles, drop = demo_env
        partial = tmp_path / "fixtures"
        partial.mkdir()
        shutil.copy(FIXTURES_DIR / "products.csv", partial / "products.csv")
        deploy(bundles, ("sales-by-product", "1.0.0"), drop)
        app.host.hot_swap_cycle()
        from scpa_host.demo import DemoApp

        broken = DemoApp(app.host, partial)
        assert broken.render() == golden("baseline.txt")


class TestSalesArithmetic:
    def _unit(self, bundles, key, tmp_path):
        drop = tmp_path / "scratch-drop"
        bundle = bundles[key]
        # run the payload directly through the loader, no host needed
        shutil.copytree(bundle, drop / key[0] / key[1])
        discovery = next(
            d for d in scan(drop).discoveries if (d.name, d.version) == key
        )
        return payload_unit_factory(
            discovery, HostContext(host_version="0.1.0", unit_name=key[0])
        )

    def test_totals_from_seed_fixtures(self, tmp_path):
        bundles = build_demo_bundles(tmp_path / "bundles")
        unit = self._unit(bundles, ("sales-by-product", "1.0.0"), tmp_path)
        payload = {
            "fixtures_dir": str(FIXTURES_DIR),
            "columns": ["id", "name", "price"],
            "products": [
                {"id": "p1", "name": "widget", "price": "10.0"},
                {"id": "p2", "name": "gadget", "price": "2.5"},
                {"id": "p3", "name": "doohickey", "price": "3.999"},
            ],
        }
        env = unit.execute(make_envelope("data.sales.read", payload))
        env = unit.execute(
            make_envelope("business.sales.compute", env.payload)
        )
        totals = env.payload["sales_totals"]
        # qty {2,3} at price 10.0 -> 50.0; 4 at 2.5 -> 10.0; {4,9} at 3.999 -> 51.987
        assert totals == {"p1": "50.0", "p2": "10.0", "p3": "51.987"}

    def test_product_without_sales_defaults_to_zero(self, tmp_path):
        bundles = build_demo_bundles(tmp_path / "bundles")
        unit = self._unit(bundles, ("sales-by-product", "1.0.0"), tmp_path)
        payload = {
            "columns": ["id", "name", "price"],
            "products": [{"id": "p9", "name": "orphan", "price": "1.0"}],
            "sales_totals": {},
        }
        env = unit.execute(make_envelope("ui.product.render", payload))
        assert env.payload["products"][0]["total_sales"] == "0.0"
        assert env.payload["columns"] == ["id", "name", "price", "total_sales"]


class TestRounding:
    @pytest.mark.parametrize(
        "version,total,expected",
        [
            ("1.0.0", "49.996", "49.99"),
            ("1.0.1", "49.996", "50.00"),
            ("1.0.0", "0", "0.00"),
            ("1.0.1", "0", "0.00"),
            ("1.0.0", "51.987", "51.98"),
            ("1.0.1", "51.987", "51.99"),
        ],
    )
    def test_rounding_versions(self, tmp_path, version, total, expected):
        bundles = build_demo_bundles(tmp_path / "bundles")
        bundle = bundles[("price-rounding-fix", version)]
        drop = tmp_path / "drop"
        shutil.copytree(bundle, drop / "price-rounding-fix" / version)
        discovery = scan(drop).discoveries[0]
        unit = payload_unit_factory(
            discovery, HostContext(host_version="0.1.0", unit_name="price-rounding-fix")
        )
        env = unit.execute(
            make_envelope(COMPUTE_EP, {"sales_totals": {"p": total}})
        )
        assert env.payload["sales_totals"]["p"] == expected


class TestSelfContainment:
    def _copy_package(self, tmp_path) -> Path:
        package_root = Path(scpa_host.__file__).parent
        copy_root = tmp_path / "scpa_host"
        shutil.copytree(
            package_root, copy_root, ignore=shutil.ignore_patterns("__pycache__")
        )
        return copy_root

    def test_artifact_unchanged_by_removing_unit_sources(self, tmp_path):
        copy_root = self._copy_package(tmp_path)
        with_units = build_demo_artifact(copy_root)
        shutil.rmtree(copy_root / "demo" / "units_src")
        without_units = build_demo_artifact(copy_root)
        assert with_units == without_units

    def test_artifact_unchanged_by_adding_unit_sources(self, tmp_path):
        copy_root = self._copy_package(tmp_path)
        baseline = build_demo_artifact(copy_root)
        extra = copy_root / "demo" / "units_src" / "new_feature"
        extra.mkdir()
        (extra / "payload.py").write_text("def handle(p, c):\n    return dict(p)\n")
        assert build_demo_artifact(copy_root) == baseline

    def test_artifact_tracks_app_code(self, tmp_path):
        copy_root = self._copy_package(tmp_path)
        baseline = build_demo_artifact(copy_root)
        app_file = copy_root / "demo" / "app.py"
        app_file.write_text(app_file.read_text() + "\nEXTRA = 1\n")
        assert build_demo_artifact(copy_root) != baseline

    def test_artifact_covers_import_closure(self, tmp_path):
        copy_root = self._copy_package(tmp_path)
        baseline = build_demo_artifact(copy_root)
        host_file = copy_root / "host.py"
        host_file.write_text(host_file.read_text() + "\nEXTRA = 1\n")
        assert build_demo_artifact(copy_root) != baseline

    def test_app_never_imports_unit_sources(self):
        package_root = Path(scpa_host.__file__).parent
        from scpa_host.demo.app import _internal_imports

        seen = set()
        frontier = [package_root / "demo" / "app.py"]
        while frontier:
            current = frontier.pop()
            if current in seen:
                continue
            seen.add(current)
            frontier.extend(_internal_imports(current, package_root, "scpa_host"))
        assert not [p for p in seen if "units_src" in str(p)]


class TestRenderTable:
    def test_alignment_and_missing_cells(self):
        text = render_table(
            ["id", "name"], [{"id": "a", "name": "x"}, {"id": "long-id"}]
        )
        assert text == "id       name\na        x\nlong-id\n"
