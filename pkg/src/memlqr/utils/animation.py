import asyncio
from contextlib import asynccontextmanager

import asyncclick as click

from .exceptions import MemlqrError
from .logger import LogMe


class Animation:
    """
    Spinner on stderr shown while a long numerical phase runs in a worker thread.

    Output goes to stderr so that stdout stays clean for summaries and piping.
    """

    spinner_chars = ["◤", "◥", "◢", "◣"]
    colors = ["cyan", "magenta", "bright_cyan", "bright_magenta"]

    def __init__(self, message_template: str = "Working", enable_animation: bool = True):
        """
        :param message_template: Text shown next to the spinner.
        :type message_template: str
        :param enable_animation: Disable for non-interactive runs.
        :type enable_animation: bool
        """
        self.stop_event = asyncio.Event()
        self.message_template = message_template
        self.enable_animation = enable_animation
        self.task = None
        self.lock = asyncio.Lock()
        self.last_message_length = 0

    async def start(self):
        if not self.enable_animation or self.task is not None:
            return
        self.stop_event.clear()
        self.task = asyncio.create_task(self._animate())

    async def stop(self):
        if self.task:
            self.stop_event.set()
            await self.task
            self.task = None

    async def update_msg(self, new_message_template: str):
        """
        Replace the spinner text, clearing the previous line first.

        :param new_message_template: The new text.
        :type new_message_template: str
        """
        async with self.lock:
            if self.enable_animation:
                click.echo("\r" + " " * self.last_message_length + "\r", nl=False, err=True)
            self.message_template = new_message_template

    async def _animate(self):
        tick = 0
        widest = 0
        while not self.stop_event.is_set():
            async with self.lock:
                spinner = click.style(
                    self.spinner_chars[tick % len(self.spinner_chars)],
                    fg=self.colors[tick % len(self.colors)],
                )
                message = f"\r{self.message_template} {spinner}"
                self.last_message_length = len(message)
                widest = max(widest, len(message))
                click.echo(message, nl=False, err=True)
                tick += 1
            await asyncio.sleep(0.2)
        click.echo("\r" + " " * widest + "\r", nl=False, err=True)

    @asynccontextmanager
    async def error_handling(self, log: LogMe):
        """
        Run the spinner for the duration of the block.

        :class:`~memlqr.utils.exceptions.MemlqrError` raised inside the block is logged and
        re-raised after the spinner stops.

        :param log: Logger receiving the error.
        :type log: LogMe
        """
        await self.start()
        try:
            yield
        except MemlqrError as e:
            log.error(f"{e}")
            raise
        finally:
            await self.stop()
