"""Hardware-model constants shared by every pipeline stage.

All widths and rates describe the modeled gate-sequencer hardware: an
8-channel board whose spline engines update waveform parameters at
409.6 MHz and exchange data in 256-bit words.
"""

# Parameter update clock. Durations quantize to integer cycles of this.
CLOCK_HZ = 409.6e6

# Frequency words resolve against twice the update clock (DAC rate), giving
# an LSB of 819.2 MHz / 2**40 ~= 745.06 uHz.
FREQ_FULL_SCALE_HZ = 819.2e6

CHANNELS = 8
TONES = 2

# Parameter slot indices. One spline engine per (parameter, tone) pair,
# eight engines per channel.
AMP = 0
FRQ = 1
PHS = 2
FRM = 3
PARAMS = 4
PARAM_NAMES = ("AMP", "FRQ", "PHS", "FRM")
SLOTS = PARAMS * TONES  # 8 FIFO-fed engines per channel


def slot_index(param: int, tone: int) -> int:
    return param * TONES + tone


# Pulses shorter than this underfeed the FIFOs (8 engines share one
# delivery lane, one word per cycle).
MIN_PULSE_CYCLES = 8

# Streaming word geometry: 4 coefficients + duration, 40 bits each, plus
# 56 bits of metadata.
WORD_BITS = 256
COEFF_BITS = 40
DURATION_BITS = 40
PAYLOAD_BITS = 4 * COEFF_BITS + DURATION_BITS  # 200
METADATA_BITS = 56
# Stored words retain the payload plus the replicated flags and the three
# coefficient shifts (32 retained bits; routing and sequence-position
# metadata are dropped or carried out of band).
STORED_WORD_BITS = 232
WORD_BYTES = WORD_BITS // 8

# LUT geometry. PLUT holds unique stored words, the MLUT remaps them into
# contiguous per-gate ranges, the GLUT holds the range bounds.
PLUT_ADDR_BITS = 12
MLUT_ADDR_BITS = 14
GLUT_STREAM_ADDR_BITS = 11   # width of addresses packed into bytecode
GLUT_PROG_ADDR_BITS = 12     # programmable space; MSB marks branch entries
GLUT_BOUNDS_BITS = 2 * MLUT_ADDR_BITS  # 28

PLUT_CAPACITY = 1 << PLUT_ADDR_BITS
MLUT_CAPACITY = 1 << MLUT_ADDR_BITS
GLUT_STREAM_CAPACITY = 1 << GLUT_STREAM_ADDR_BITS
GLUT_PROG_CAPACITY = 1 << GLUT_PROG_ADDR_BITS

# Bytecode packets: 2-bit kind + 5-bit count + packed 11-bit addresses.
PACKET_KIND_BITS = 2
PACKET_COUNT_BITS = 5
PACKET_ADDRS = (WORD_BITS - PACKET_KIND_BITS - PACKET_COUNT_BITS) // GLUT_STREAM_ADDR_BITS  # 22

PACKET_NORMAL = 0
PACKET_BRANCH = 1
PACKET_BRANCH_CONT = 2

# Fixed-point interpolation: 40-bit output words over 96-bit internal
# accumulators. 56 fractional bits keep the N^3/6 amplification of the
# cubic coefficient's rounding error below one LSB out to 1e5-cycle
# segments; the 40-bit mantissas then bound the total error at 2 LSB.
FRAC_BITS = 56
ACC_BITS = 96
MASK40 = (1 << 40) - 1
MASK_ACC = (1 << ACC_BITS) - 1

# Amplitude payload is a signed 16-bit value in the low bits of its
# 40-bit field; 1.0 maps to the positive full scale.
AMP_FULL_SCALE = 32767

# Higher-order coefficients are stored as 40-bit mantissas, each with its
# own 6-bit left-shift.
SHIFT_BITS = 6
MAX_SHIFT = ACC_BITS - (40 - 1)  # 57; mantissa * 2**shift stays inside ACC_BITS
MANTISSA_BITS = 40

# Simulator defaults.
DEFAULT_FIFO_DEPTH = 16
DEFAULT_BRANCH_LATENCY = 20  # cycles, ~50 ns of LUT propagation
DEFAULT_BRANCH_SHIFT = 4     # measurement outcome shift S in address OR-ing

# Program container.
FILE_MAGIC = b"OCT8"
FILE_VERSION = 1

# Wire protocol for remote gate definitions.
WIRE_MAGIC = b"GPR1"
WIRE_VERSION = 1
