"""Conservative co-simulation of power-aggregation agents and a packet network."""

from .agents import Agent, AgentConfig, OverlayTopology, PowerSource, generate_overlay
from .bridge import Bridge, NetsimEndpoint, open_session
from .kernel import EventQueue, SimTime
from .netsim import NetworkEngine, NetworkTopology, build_network, route, transmission_delay
from .orchestrator import Connection, Endpoint, Orchestrator, RunReport
from .scenario import ScenarioConfig, RunStats, load_scenario, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Agent", "AgentConfig", "Bridge", "Connection", "Endpoint", "EventQueue", "NetsimEndpoint",
    "NetworkEngine", "NetworkTopology", "Orchestrator", "OverlayTopology", "PowerSource",
    "RunReport", "RunStats", "ScenarioConfig", "SimTime", "build_network", "generate_overlay",
    "load_scenario", "open_session", "route", "run_scenario", "transmission_delay",
]
