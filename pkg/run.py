import logging
import sys

import click

import document_store
import http_service
import scanner
from constants import ATTACK_DESCRIPTIONS, LAB_WARNING, MITIGATIONS, AttackClass, RestMode
from settings import SettingsError, load_settings

logger = logging.getLogger(__name__)

EXIT_CLEAN = 0
EXIT_FINDINGS = 1
EXIT_ERROR = 2


def print_summary(report: scanner.Report, label: str):
    click.echo(f'*** {label}: {report.target} ***')
    click.echo(scanner.render_report(report, 'text'), nl=False)


@click.group()
@click.option('--log-level', default=None, type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
              help='Overrides [logging] level from the settings file.')
@click.option('--settings', 'settings_path', default=None, type=click.Path(dir_okay=False),
              help='TOML settings file (default: $NOSQLI_LAB_SETTINGS or ./lab.toml).')
@click.pass_context
def cli(ctx, log_level, settings_path):
    """NoSQL injection lab: a deliberately vulnerable target, its hardened twin and a scanner."""
    try:
        settings = load_settings(settings_path)
    except SettingsError as e:
        click.echo(f'bad settings: {e}', err=True)
        sys.exit(EXIT_ERROR)
    logging.basicConfig(level=(log_level or settings['logging']['level']).upper(),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    ctx.obj = settings


@cli.command()
@click.option('--port', type=int, default=None, help='Port to listen on.')
@click.option('--host', default=None, help='Interface to bind. Keep it on localhost.')
@click.option('--rest-mode', type=click.Choice([m.value for m in RestMode]), default=None,
              help='open accepts any body on /rest; json-only demands application/json.')
@click.option('--enable-state-endpoint', is_flag=True, default=False, help='Expose GET /__state/<collection>.')
@click.pass_obj
def serve(settings, port, host, rest_mode, enable_state_endpoint):
    """Run the lab service until interrupted."""
    conf = settings['service']
    port = conf['port'] if port is None else port
    host = host or conf['host']
    rest_mode = RestMode(rest_mode or conf['rest_mode'])
    enable_state = enable_state_endpoint or conf['enable_state_endpoint']

    app = http_service.create_app(http_service.seed_fixtures(document_store.Store()), rest_mode=rest_mode,
                                  enable_state=enable_state, step_budget=settings['script']['step_budget'],
                                  max_body_bytes=conf['max_body_bytes'])
    try:
        server = http_service.make_lab_server(app, host, port, conf['request_timeout'])
    except (OSError, SystemExit) as e:
        click.echo(f'cannot listen on {host}:{port}: {e}', err=True)
        sys.exit(EXIT_ERROR)

    click.echo(LAB_WARNING, err=True)
    click.echo(f'serving on http://{host}:{server.server_port} rest_mode={rest_mode.value} '
               f'state_endpoint={"on" if enable_state else "off"}')
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


@cli.command()
@click.option('--config', 'config_path', required=True, help='Target config JSON.')
@click.option('--format', 'fmt', type=click.Choice(['json', 'text']), default='text')
@click.option('--output', default=None, type=click.Path(dir_okay=False), help='Write the report here instead of stdout.')
@click.pass_obj
def scan(settings, config_path, fmt, output):
    """Scan a target; exit 1 if anything was found."""
    try:
        config = scanner.load_target_config(config_path)
        report = scanner.scan(config, workers=settings['scanner']['workers'],
                              timeout=settings['scanner']['probe_timeout'])
    except scanner.ScannerError as e:
        click.echo(f'scan failed: {e}', err=True)
        sys.exit(EXIT_ERROR)

    rendered = scanner.render_report(report, fmt)
    if output:
        try:
            with open(output, 'w', encoding='utf-8') as f:
                f.write(rendered)
        except OSError as e:
            click.echo(f'cannot write {output}: {e.strerror}', err=True)
            sys.exit(EXIT_ERROR)
    else:
        click.echo(rendered, nl=False)
    sys.exit(EXIT_FINDINGS if report.findings else EXIT_CLEAN)


def run_demo(settings: dict, disabled_mitigations=()) -> list:
    """Scan an in-process vulnerable lab and hardened lab; return the stages that failed."""
    budget = settings['script']['step_budget']
    vulnerable = http_service.create_app(rest_mode=RestMode.OPEN, enable_state=True, step_budget=budget,
                                         disabled_mitigations=disabled_mitigations)
    hardened = http_service.create_app(rest_mode=RestMode.JSON_ONLY, enable_state=True, step_budget=budget,
                                       disabled_mitigations=disabled_mitigations)
    workers, timeout = settings['scanner']['workers'], settings['scanner']['probe_timeout']

    with http_service.serve_in_background(vulnerable) as vuln_server, \
            http_service.serve_in_background(hardened) as hard_server:
        vuln_report = scanner.scan(scanner.lab_target_config(vuln_server.base_url), workers, timeout)
        hard_report = scanner.scan(scanner.lab_target_config(hard_server.base_url, hardened=True), workers, timeout)

    print_summary(vuln_report, 'vulnerable lab')
    print_summary(hard_report, 'hardened lab')
    click.echo()

    failed = []
    found, fell = scanner.classes_found(vuln_report), scanner.classes_found(hard_report)
    for attack_class in AttackClass:
        reproduced = attack_class in found
        blocked = attack_class not in fell
        click.echo(f'{attack_class.value}: {"reproduced" if reproduced else "NOT reproduced"}, '
                   f'hardened twin {"resisted" if blocked else "FELL"}')
        click.echo(f'    {ATTACK_DESCRIPTIONS[attack_class]}')
        if not reproduced:
            failed.append(f'{attack_class.value}-vulnerable')
        if not blocked:
            failed.append(f'{attack_class.value}-hardened')
    return failed


@cli.command()
@click.option('--disable-mitigation', 'disabled', multiple=True, type=click.Choice(sorted(MITIGATIONS)), hidden=True)
@click.pass_obj
def demo(settings, disabled):
    """Reproduce all four attacks and check the hardened twins resist them."""
    click.echo(LAB_WARNING, err=True)
    try:
        failed = run_demo(settings, disabled)
    except scanner.ScannerError as e:
        click.echo(f'demo failed: {e}', err=True)
        sys.exit(EXIT_ERROR)
    if failed:
        click.echo(f'demo failed at stage(s): {", ".join(failed)}')
        sys.exit(EXIT_FINDINGS)
    click.echo('all four attacks reproduced; all hardened twins resisted')
    sys.exit(EXIT_CLEAN)


if __name__ == '__main__':
    cli()
