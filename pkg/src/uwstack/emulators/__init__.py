"""Local stand-ins for acoustic modems, driven by a shared channel model."""

from .channel import (MODEM_DEFAULTS, ChannelConfig, Delivery, VirtualMedium, analytic_delivery_time,
                      deliver, get_medium, prop_delay, tx_duration)
from .modems import AhoiEmulator, S2CEmulator, ahoi_emulator_serve, s2c_emulator_serve
from .remote import MediumServer, RemoteMedium

__all__ = [
    "AhoiEmulator", "ChannelConfig", "MODEM_DEFAULTS", "Delivery", "MediumServer", "RemoteMedium", "S2CEmulator", "VirtualMedium",
    "ahoi_emulator_serve", "analytic_delivery_time", "deliver", "get_medium",
    "prop_delay", "s2c_emulator_serve", "tx_duration",
]
