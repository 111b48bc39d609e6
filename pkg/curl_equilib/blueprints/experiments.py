"""
Experiments blueprint - CLI commands for studies, rates and mesh checks
"""
import click
from flask import Blueprint, current_app

from ..algorithms import mesh_core
from ..exceptions import CurlEquilibError, PostCheckError
from ..helpers import parse_int_list, parse_key_value_file, read_csv, write_csv
from ..models import ExperimentConfig
from ..services import ExperimentService

experiments_bp = Blueprint('experiments', __name__, cli_group=None)

EXIT_POST_CHECK_FAILED = 2


@experiments_bp.cli.command("run")
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False), help="key = value config file")
@click.option("--case", type=str, help="const_j | sine | lshape | custom")
@click.option("--study", type=str, help="convergence | p_sweep")
@click.option("--degrees", type=str, help="comma separated degrees, e.g. 1,2")
@click.option("--mesh-n", type=str, help="comma separated structured mesh sizes, e.g. 1,2,4")
@click.option("--mesh-file", type=click.Path(exists=True, dir_okay=False), help="ASCII mesh instead of structured meshes")
@click.option("--series-terms", type=int, help="truncation M of the const_j series")
@click.option("--theta", "doerfler_theta", type=float, help="Doerfler marking fraction")
@click.option("--out", type=str, help="CSV output path")
@click.option("--verify/--no-verify", default=None, help="check every post-condition")
@click.option("--timing/--no-timing", "record_timing", default=None, help="write wall times (off: seconds = 0)")
@click.option("--dump-dir", type=str, help="write every patch problem to this directory")
def run(config_file, case, study, degrees, mesh_n, mesh_file, series_terms, doerfler_theta, out, verify,
        record_timing, dump_dir):
    """Run a convergence study or p-sweep and write the CSV."""
    if config_file:
        current_app.config.from_file(config_file, load=parse_key_value_file)

    flags = {
        "CASE": case, "STUDY": study, "SERIES_TERMS": series_terms, "DOERFLER_THETA": doerfler_theta,
        "OUT": out, "VERIFY": verify, "RECORD_TIMING": record_timing, "DUMP_DIR": dump_dir,
        "DEGREES": parse_int_list(degrees) if degrees else None,
        "MESH_N": parse_int_list(mesh_n) if mesh_n else None,
        "MESH_FILE": mesh_file,
    }
    current_app.config.update({key: value for key, value in flags.items() if value is not None})
    config = ExperimentConfig.from_mapping(current_app.config)

    try:
        rows = ExperimentService.run(config)
    except PostCheckError as exc:
        click.echo(f"post-check failed: {exc}", err=True)
        click.get_current_context().exit(EXIT_POST_CHECK_FAILED)
    except CurlEquilibError as exc:
        raise click.ClickException(str(exc)) from exc

    write_csv(rows, config.out)
    current_app.logger.info("wrote %d rows to %s", len(rows), config.out)
    for row in rows:
        click.echo(",".join(str(value) for value in row.as_csv()))


@experiments_bp.cli.command("rates")
@click.argument("csv_path", type=click.Path(exists=True, dir_okay=False))
def rates(csv_path):
    """Observed convergence rates from a study CSV."""
    try:
        results = ExperimentService.observed_rates(read_csv(csv_path))
    except CurlEquilibError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo("case,p,N,rate")
    for entry in results:
        click.echo(f"{entry['case']},{entry['p']},{entry['N']},{entry['rate']:.4f}")


@experiments_bp.cli.command("check-mesh")
@click.argument("mesh_path", type=click.Path(exists=True, dir_okay=False))
def check_mesh(mesh_path):
    """Load a mesh, print its sizes and the boundary-patch geometry violators."""
    try:
        mesh = mesh_core.load_mesh(mesh_path)
    except CurlEquilibError as exc:
        raise click.ClickException(str(exc)) from exc
    violators = mesh_core.validate_patch_geometry(mesh)
    click.echo(f"vertices {mesh.n_vertices}, tetrahedra {mesh.n_tets}, edges {mesh.n_edges}, faces {mesh.n_faces}")
    click.echo(f"h {mesh.h:.6e}, kappa {mesh.kappa:.4f}")
    click.echo(f"boundary faces {mesh.boundary_faces.size}, geometry violators {len(violators)}")
    for vertex in violators:
        click.echo(f"  vertex {vertex}")
