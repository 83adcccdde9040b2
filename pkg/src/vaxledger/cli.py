"""Command-line front end: run scenarios, inspect chains, issue certificates."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import certificates as certs
from .coldchain import builtin_profiles, dump_profiles, load_profiles
from .consensus import NetConfig
from .errors import VaxledgerError
from .identity import load_actors_file, kind_from_label, matrix_table
from .ledger import QueryFilter, query as ledger_query, read_snapshot, verify_chain, write_snapshot
from .scenario import load_net_config, run_scenario
from .telemetry import dump_trace, generate_trace, load_trace_profile
from .transactions import Transaction
from .world import ContractEngine, replay
from .identity import kind_label


@click.group()
def main() -> None:
    """Deterministic vaccination supply-chain ledger."""


@main.command("run")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--actors", "actors_path", required=True, type=click.Path(exists=True))
@click.option("--profiles", "profiles_path", type=click.Path(exists=True), default=None,
              help="Product profile file; defaults to the built-in four.")
@click.option("--net", "net_path", type=click.Path(exists=True), default=None)
@click.option("--nodes", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--max-ticks", default=2000, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the report as JSON.")
@click.option("--snapshot", "snapshot_path", type=click.Path(), default=None,
              help="Write the converged ledger snapshot.")
@click.option("--events", "events_path", type=click.Path(), default=None,
              help="Write the event log, one record per line.")
def run_command(scenario_path, actors_path, profiles_path, net_path, nodes, seed,
                max_ticks, out_path, snapshot_path, events_path) -> None:
    """Run a scenario through the replicated ledger and print the report."""
    try:
        profiles = (
            load_profiles(Path(profiles_path).read_text(encoding="utf-8"))
            if profiles_path
            else builtin_profiles()
        )
        net = load_net_config(net_path) if net_path else NetConfig()
        if seed:
            net = NetConfig(
                delay_min_ticks=net.delay_min_ticks,
                delay_max_ticks=net.delay_max_ticks,
                drop_probability=net.drop_probability,
                seed=seed,
                partitions=net.partitions,
                base_epoch=net.base_epoch,
                tick_seconds=net.tick_seconds,
            )
        result = run_scenario(
            scenario_path,
            actors_path,
            profiles=profiles,
            net=net,
            node_count=nodes,
            max_ticks=max_ticks,
        )
    except VaxledgerError as error:
        raise click.ClickException(str(error)) from error

    click.echo(result.report.to_text(), nl=False)
    if out_path:
        Path(out_path).write_text(result.report.to_json(), encoding="utf-8")
    if snapshot_path:
        Path(snapshot_path).write_bytes(write_snapshot(result.ledger))
    if events_path:
        Path(events_path).write_text(
            "".join(event.to_line() + "\n" for event in result.events), encoding="utf-8"
        )
    sys.exit(result.report.exit_code)


@main.command("verify-chain")
@click.option("--snapshot", "snapshot_path", required=True, type=click.Path(exists=True))
@click.option("--actors", "actors_path", required=True, type=click.Path(exists=True))
def verify_chain_command(snapshot_path, actors_path) -> None:
    """Re-verify every hash and signature in a ledger snapshot."""
    try:
        directory = load_actors_file(actors_path)
        directory.ensure_contract_identity()
        ledger = read_snapshot(Path(snapshot_path).read_bytes())
    except VaxledgerError as error:
        raise click.ClickException(str(error)) from error
    report = verify_chain(ledger, directory)
    click.echo(str(report))
    sys.exit(0 if report.valid else 1)


@main.command("query")
@click.option("--snapshot", "snapshot_path", required=True, type=click.Path(exists=True))
@click.option("--kind", default=None, help="Transaction kind label, e.g. TelemetryBatch.")
@click.option("--author", default=None)
@click.option("--subject", default=None, help="Any referenced id: VID, TID, BID, unit.")
@click.option("--from", "from_ts", type=int, default=None)
@click.option("--to", "to_ts", type=int, default=None)
def query_command(snapshot_path, kind, author, subject, from_ts, to_ts) -> None:
    """List matching transactions in chain order."""
    try:
        ledger = read_snapshot(Path(snapshot_path).read_bytes())
        filter_ = QueryFilter(
            kind=kind_from_label(kind) if kind else None,
            author=author,
            subject=subject,
            from_timestamp=from_ts,
            to_timestamp=to_ts,
        )
    except VaxledgerError as error:
        raise click.ClickException(str(error)) from error
    for tx in ledger_query(ledger, filter_):
        click.echo(_tx_line(tx))


def _tx_line(tx: Transaction) -> str:
    subjects = ",".join(sorted(tx.subjects()))
    return (
        f"{tx.tx_id.hex()[:16]} kind={kind_label(tx.kind)} author={tx.author} "
        f"ts={tx.timestamp} subjects={subjects}"
    )


@main.group("profiles")
def profiles_group() -> None:
    """Product profile tools."""


@profiles_group.command("dump")
@click.option("--out", "out_path", type=click.Path(), default=None)
def profiles_dump(out_path) -> None:
    """Emit the four built-in product profiles."""
    text = dump_profiles(builtin_profiles())
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@main.command("gen-telemetry")
@click.option("--profile", "profile_path", required=True, type=click.Path(exists=True))
@click.option("--duration", required=True, type=int, help="Trace length in seconds.")
@click.option("--out", "out_path", type=click.Path(), default=None)
def gen_telemetry(profile_path, duration, out_path) -> None:
    """Generate a reproducible sensor trace from a trace profile."""
    try:
        profile = load_trace_profile(profile_path)
        readings = generate_trace(profile, duration)
        text = dump_trace(readings, profile.subject_class, profile.interval_seconds, profile.seed)
    except VaxledgerError as error:
        raise click.ClickException(str(error)) from error
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@main.group("cert")
def cert_group() -> None:
    """Issue and verify vaccination certificates."""


@cert_group.command("issue")
@click.option("--snapshot", "snapshot_path", required=True, type=click.Path(exists=True))
@click.option("--actors", "actors_path", required=True, type=click.Path(exists=True))
@click.option("--profiles", "profiles_path", type=click.Path(exists=True), default=None)
@click.option("--bid", required=True)
@click.option("--issuer", required=True, help="Doctor or medical-center actor id.")
def cert_issue(snapshot_path, actors_path, profiles_path, bid, issuer) -> None:
    """Replay the snapshot and issue a certificate for a beneficiary."""
    try:
        directory = load_actors_file(actors_path)
        directory.ensure_contract_identity()
        products = (
            load_profiles(Path(profiles_path).read_text(encoding="utf-8"))
            if profiles_path
            else builtin_profiles()
        )
        ledger = read_snapshot(Path(snapshot_path).read_bytes())
        engine = ContractEngine(directory)
        world, _ = replay(engine, ledger.transactions(), products)
        identity = directory.get(issuer)
        if identity is None:
            raise click.ClickException(f"unknown issuer {issuer!r}")
        certificate = certs.issue_certificate(world, bid, identity)
    except VaxledgerError as error:
        raise click.ClickException(str(error)) from error
    click.echo(certs.encode_payload(certificate))


@cert_group.command("verify")
@click.option("--cert", "cert_text", default=None, help="Certificate payload text.")
@click.option("--cert-file", "cert_file", type=click.Path(exists=True), default=None)
@click.option("--trust", "trust_path", required=True, type=click.Path(exists=True),
              help="Trust map: one 'actor_id hexkey' per line.")
def cert_verify(cert_text, cert_file, trust_path) -> None:
    """Offline-verify a certificate payload against a trust map."""
    if (cert_text is None) == (cert_file is None):
        raise click.ClickException("pass exactly one of --cert or --cert-file")
    if cert_file is not None:
        cert_text = Path(cert_file).read_text(encoding="utf-8").strip()
    try:
        trusted = certs.load_trust_map(trust_path)
    except VaxledgerError as error:
        raise click.ClickException(str(error)) from error
    result = certs.verify_certificate(cert_text, trusted)
    click.echo(result.value)
    sys.exit(
        0
        if result in (certs.VerificationResult.VALID_PARTIAL, certs.VerificationResult.VALID_FINAL)
        else 1
    )


@main.command("matrix")
def matrix_command() -> None:
    """Dump the compiled role permission matrix for audit."""
    click.echo(matrix_table(), nl=False)


if __name__ == "__main__":
    main()
