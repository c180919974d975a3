"""Measurement-based quantum Turing machines.

Quantum state vectors and projective measurement (``quantum_core``), the
machine runtime (``machine``), measurement-only protocols with Pauli frame
tracking (``protocols``), the model families and their reductions
(``models``), a circuit-to-machine compiler (``compiler``), execution trees
(``exec_tree``), text formats (``formats``) and a command-line front end
(``cli``).
"""

from .compiler import (
    Circuit,
    CompileError,
    CompiledCircuit,
    Gate,
    compile_circuit,
    full_simulation,
    step_of_simulation,
    verify_compiled,
)
from .exec_tree import (
    TreeNode,
    build_tree,
    depth_masses,
    dump_tree,
    exact_termination_bounds,
    sample_path,
    termination_probability_bounds,
)
from .kernels import BACKEND
from .machine import (
    ZERO,
    AncillaPolicy,
    HeadSpec,
    MachineError,
    MachineSpec,
    TapeSpec,
    Transition,
    make_machine,
    new_run,
    output_window,
    run,
    step,
    validate,
)
from .models import (
    ClassicalTM,
    MeasurementProgram,
    compare_with_flat,
    compile_classical_tm,
    make_model,
    simulate_program_on,
    validate_model,
)
from .protocols import (
    PauliFrame,
    Register,
    bell_prepare_cross_tape,
    check_protocol,
    classical_read,
    classical_write,
    enumerate_paths,
    state_transfer,
    teleport,
)
from .quantum_core import (
    EntangledError,
    Observable,
    PauliOp,
    StateVector,
    ValidationError,
    builtin_observable,
    fidelity_up_to_global_phase,
    measure,
    outcome_distribution,
    single_qubit_purity,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
