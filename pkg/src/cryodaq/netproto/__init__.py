"""Minimal channel-access-style protocol: network-transparent get/put and
monitor subscriptions over length-prefixed TCP frames."""

from cryodaq.netproto.client import Client, Subscription, parse_endpoint
from cryodaq.netproto.codec import WireValue
from cryodaq.netproto.live import LiveTable
from cryodaq.netproto.server import STATS_CHANNEL, ChannelAccessServer


def serve(live: LiveTable, host: str = "127.0.0.1", port: int = 0, **kw) -> ChannelAccessServer:
    """Start a server for ``live``; returns it running."""
    return ChannelAccessServer(live, host, port, **kw).start()


__all__ = ["ChannelAccessServer", "Client", "LiveTable", "STATS_CHANNEL", "Subscription",
           "WireValue", "parse_endpoint", "serve"]
