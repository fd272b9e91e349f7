import click

from utils.errors import TTSSError, UsageError
from utils.logger import logger, set_level

from commands import (
    classify,
    fit,
    inspect,
    storage,
    sweep,
)


class TTSSGroup(click.Group):
    """Maps library errors to exit codes: 1 usage, 2 data, 3 numeric."""

    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as e:
            e.exit_code = UsageError.exit_code
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = UsageError.exit_code
            raise
        except TTSSError as e:
            logger.error(f"{type(e).__name__}: {e.detail}")
            click.echo(f"Error: {e.detail}", err=True)
            ctx.exit(e.exit_code)


@click.group(cls=TTSSGroup)
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              help="Override TTSS_LOG_LEVEL for this run")
def cli(log_level):
    """Tensor-train subspace learning: TT-PCA, TT-NPE and compression sweeps."""
    if log_level:
        set_level(log_level)


# Register commands
cli.add_command(fit.fit)
cli.add_command(classify.classify)
cli.add_command(sweep.sweep)
cli.add_command(storage.storage)
cli.add_command(inspect.inspect)


if __name__ == "__main__":
    cli()
