"""seajoint: control stack and digital twin for sealed underwater joints.

Modules: :mod:`servobus` (frame codec and bus master), :mod:`joint`
(joint runtime), :mod:`kinematics` (RRR leg and gait), :mod:`leakwatch`
(early leak detection), :mod:`telemetry` (topside link), :mod:`sim`
(deterministic digital twin), :mod:`hydrocalc` (enclosure physics),
:mod:`service` and :mod:`cli` (orchestration and the ``seajoint``
command).
"""

__version__ = "0.1.0"
