"""Reference adapter: serve any Python tracking callable as a tracker oracle.

Speaks the wire protocol documented in ``protocol/PROTOCOL.md`` over stdio
or TCP, so an external tracker becomes attackable via ``bridge:...`` tracker
specs without importing anything from the attack package.
"""

from .adapter import AdapterBinding, run_adapter, serve_stream
from .bindings import constant_box_binding, template_matching_binding
from .wire import WireError

__all__ = [
    "AdapterBinding",
    "WireError",
    "constant_box_binding",
    "run_adapter",
    "serve_stream",
    "template_matching_binding",
]
