use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{BinaryOp, DomainError, Relation, UnaryOp};

/// Comparison evaluated by branch and select instructions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guard {
    pub lhs: u32,
    pub rel: Relation,
    pub rhs: u32,
}

impl Guard {
    #[inline]
    fn holds(&self, slots: &[f64]) -> bool {
        self.rel.holds(slots[self.lhs as usize], slots[self.rhs as usize])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Instr {
    Input {
        dest: u32,
        index: u32,
    },
    Const {
        dest: u32,
        value: f64,
    },
    Unary {
        dest: u32,
        op: UnaryOp,
        arg: u32,
    },
    Binary {
        dest: u32,
        op: BinaryOp,
        lhs: u32,
        rhs: u32,
    },
    /// Jumps to `target` when the guard evaluates to `when`.
    Branch {
        guard: Guard,
        when: bool,
        target: u32,
    },
    Jump {
        target: u32,
    },
    /// `dest = guard ? then : otherwise`; only the live operand is read.
    Select {
        dest: u32,
        guard: Guard,
        then: u32,
        otherwise: u32,
    },
}

impl Instr {
    pub fn dest(&self) -> Option<u32> {
        match *self {
            Instr::Input { dest, .. }
            | Instr::Const { dest, .. }
            | Instr::Unary { dest, .. }
            | Instr::Binary { dest, .. }
            | Instr::Select { dest, .. } => Some(dest),
            Instr::Branch { .. } | Instr::Jump { .. } => None,
        }
    }

    /// Slots read by this instruction.
    pub fn operands(&self) -> Vec<u32> {
        match *self {
            Instr::Input { .. } | Instr::Const { .. } | Instr::Jump { .. } => vec![],
            Instr::Unary { arg, .. } => vec![arg],
            Instr::Binary { lhs, rhs, .. } => vec![lhs, rhs],
            Instr::Branch { guard, .. } => vec![guard.lhs, guard.rhs],
            Instr::Select { guard, then, otherwise, .. } => vec![guard.lhs, guard.rhs, then, otherwise],
        }
    }

    pub fn target(&self) -> Option<u32> {
        match *self {
            Instr::Branch { target, .. } | Instr::Jump { target } => Some(target),
            _ => None,
        }
    }

    pub(crate) fn map_slots(&mut self, f: impl Fn(u32) -> u32) {
        match self {
            Instr::Input { dest, .. } | Instr::Const { dest, .. } => *dest = f(*dest),
            Instr::Unary { dest, arg, .. } => {
                *dest = f(*dest);
                *arg = f(*arg);
            }
            Instr::Binary { dest, lhs, rhs, .. } => {
                *dest = f(*dest);
                *lhs = f(*lhs);
                *rhs = f(*rhs);
            }
            Instr::Branch { guard, .. } => {
                guard.lhs = f(guard.lhs);
                guard.rhs = f(guard.rhs);
            }
            Instr::Jump { .. } => {}
            Instr::Select { dest, guard, then, otherwise } => {
                *dest = f(*dest);
                guard.lhs = f(guard.lhs);
                guard.rhs = f(guard.rhs);
                *then = f(*then);
                *otherwise = f(*otherwise);
            }
        }
    }

    pub(crate) fn map_operands(&mut self, f: impl Fn(u32) -> u32) {
        let dest = self.dest();
        self.map_slots(&f);
        if let (Some(d), Some(slot)) = (dest, self.dest_mut()) {
            *slot = d;
        }
    }

    fn dest_mut(&mut self) -> Option<&mut u32> {
        match self {
            Instr::Input { dest, .. }
            | Instr::Const { dest, .. }
            | Instr::Unary { dest, .. }
            | Instr::Binary { dest, .. }
            | Instr::Select { dest, .. } => Some(dest),
            Instr::Branch { .. } | Instr::Jump { .. } => None,
        }
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = |g: &Guard| format!("r{} {} r{}", g.lhs, g.rel.symbol(), g.rhs);
        match self {
            Instr::Input { dest, index } => write!(f, "r{dest} = input {index}"),
            Instr::Const { dest, value } => write!(f, "r{dest} = const {value:?}"),
            Instr::Unary { dest, op, arg } => write!(f, "r{dest} = {op:?} r{arg}"),
            Instr::Binary { dest, op, lhs, rhs } => write!(f, "r{dest} = {op:?} r{lhs}, r{rhs}"),
            Instr::Branch { guard, when, target } => write!(f, "if ({}) == {when} goto {target}", g(guard)),
            Instr::Jump { target } => write!(f, "goto {target}"),
            Instr::Select { dest, guard, then, otherwise } => {
                write!(f, "r{dest} = ({}) ? r{then} : r{otherwise}", g(guard))
            }
        }
    }
}

/// Linear three-address program over numbered slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelProgram {
    pub inputs: Vec<String>,
    pub outputs: Vec<(String, u32)>,
    pub slot_count: u32,
    pub instructions: Vec<Instr>,
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ExecError> {
        if data.len() != rows * cols {
            return Err(ExecError::Shape { expected: rows * cols, got: data.len() });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(cols: usize, rows: &[Vec<f64>]) -> Result<Self, ExecError> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(ExecError::Columns { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("batch has {got} columns, kernel expects {expected}")]
    Columns { expected: usize, got: usize },
    #[error("matrix data has {got} values, shape needs {expected}")]
    Shape { expected: usize, got: usize },
    #[error("row {row}: {kind} at instruction {pc}")]
    Domain { row: usize, pc: usize, kind: DomainError },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("not a kernel artifact (bad magic)")]
    BadMagic,
    #[error("unsupported kernel format version {0}")]
    Version(u8),
    #[error("truncated kernel artifact")]
    Truncated,
    #[error("trailing bytes after kernel artifact")]
    Trailing,
    #[error("invalid utf-8 in name")]
    Utf8,
    #[error("unknown opcode {0}")]
    Opcode(u8),
    #[error("unknown relation code {0}")]
    Relation(u8),
    #[error("invalid kernel at instruction {pc}: {reason}")]
    Invalid { pc: usize, reason: String },
    #[error("unknown input variable {0:?}")]
    UnknownInput(String),
}

impl KernelProgram {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Number of instructions matching `pred`.
    pub fn count(&self, pred: impl Fn(&Instr) -> bool) -> usize {
        self.instructions.iter().filter(|i| pred(i)).count()
    }

    pub fn output_index(&self, label: &str) -> Option<usize> {
        self.outputs.iter().position(|(l, _)| l == label)
    }

    /// Runs one row; `slots` is scratch space reused between calls.
    pub fn execute_row(&self, row: &[f64], slots: &mut Vec<f64>, out: &mut [f64]) -> Result<(), (usize, DomainError)> {
        slots.clear();
        slots.resize(self.slot_count as usize, f64::NAN);
        let code = &self.instructions;
        let mut pc = 0usize;
        while pc < code.len() {
            match code[pc] {
                Instr::Input { dest, index } => slots[dest as usize] = row[index as usize],
                Instr::Const { dest, value } => slots[dest as usize] = value,
                Instr::Unary { dest, op, arg } => {
                    slots[dest as usize] = op.apply(slots[arg as usize]).map_err(|k| (pc, k))?;
                }
                Instr::Binary { dest, op, lhs, rhs } => {
                    slots[dest as usize] = op.apply(slots[lhs as usize], slots[rhs as usize]).map_err(|k| (pc, k))?;
                }
                Instr::Branch { guard, when, target } => {
                    if guard.holds(slots) == when {
                        pc = target as usize;
                        continue;
                    }
                }
                Instr::Jump { target } => {
                    pc = target as usize;
                    continue;
                }
                Instr::Select { dest, guard, then, otherwise } => {
                    let src = if guard.holds(slots) { then } else { otherwise };
                    slots[dest as usize] = slots[src as usize];
                }
            }
            pc += 1;
        }
        for (o, (_, slot)) in out.iter_mut().zip(&self.outputs) {
            *o = slots[*slot as usize];
        }
        Ok(())
    }

    /// Executes every row independently; output row `i` holds the roots
    /// evaluated at input row `i`.
    pub fn execute(&self, batch: &Matrix) -> Result<Matrix, ExecError> {
        if batch.cols != self.inputs.len() {
            return Err(ExecError::Columns { expected: self.inputs.len(), got: batch.cols });
        }
        let width = self.outputs.len();
        let mut data = vec![0.0; batch.rows * width];
        let mut slots = Vec::new();
        for r in 0..batch.rows {
            self.execute_row(batch.row(r), &mut slots, &mut data[r * width..(r + 1) * width])
                .map_err(|(pc, kind)| ExecError::Domain { row: r, pc, kind })?;
        }
        Ok(Matrix { rows: batch.rows, cols: width, data })
    }

    /// Like [`execute`](Self::execute) with rows split across `workers`
    /// threads. The result is identical to sequential execution.
    pub fn execute_parallel(&self, batch: &Matrix, workers: usize) -> Result<Matrix, ExecError> {
        if batch.cols != self.inputs.len() {
            return Err(ExecError::Columns { expected: self.inputs.len(), got: batch.cols });
        }
        let width = self.outputs.len();
        if width == 0 || workers <= 1 {
            return self.execute(batch);
        }
        let mut data = vec![0.0; batch.rows * width];
        let per = batch.rows.div_ceil(workers.max(1)).max(1);
        let results: Vec<Result<(), ExecError>> = std::thread::scope(|s| {
            let handles: Vec<_> = data
                .chunks_mut(per * width)
                .enumerate()
                .map(|(c, chunk)| {
                    s.spawn(move || {
                        let mut slots = Vec::new();
                        let first = c * per;
                        for (i, out) in chunk.chunks_mut(width).enumerate() {
                            let r = first + i;
                            self.execute_row(batch.row(r), &mut slots, out)
                                .map_err(|(pc, kind)| ExecError::Domain { row: r, pc, kind })?;
                        }
                        Ok(())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        results.into_iter().collect::<Result<(), _>>()?;
        Ok(Matrix { rows: batch.rows, cols: width, data })
    }

    /// Structural checks for programs from untrusted sources: slots in
    /// range, single assignment, operands defined earlier in program order,
    /// forward-only jumps.
    pub fn validate(&self) -> Result<(), KernelError> {
        let n = self.instructions.len();
        let mut defined = vec![false; self.slot_count as usize];
        let bad = |pc: usize, reason: String| KernelError::Invalid { pc, reason };
        for (pc, ins) in self.instructions.iter().enumerate() {
            for op in ins.operands() {
                if op >= self.slot_count {
                    return Err(bad(pc, format!("slot r{op} out of range")));
                }
                if !defined[op as usize] {
                    return Err(bad(pc, format!("slot r{op} read before it is written")));
                }
            }
            if let Instr::Input { index, .. } = ins {
                if *index as usize >= self.inputs.len() {
                    return Err(bad(pc, format!("input index {index} out of range")));
                }
            }
            if let Some(t) = ins.target() {
                if t as usize <= pc || t as usize > n {
                    return Err(bad(pc, format!("jump target {t} is not a forward target")));
                }
            }
            if let Some(d) = ins.dest() {
                if d >= self.slot_count {
                    return Err(bad(pc, format!("slot r{d} out of range")));
                }
                if std::mem::replace(&mut defined[d as usize], true) {
                    return Err(bad(pc, format!("slot r{d} written twice")));
                }
            }
        }
        for (label, slot) in &self.outputs {
            if *slot >= self.slot_count || !defined[*slot as usize] {
                return Err(bad(n, format!("output {label:?} reads unwritten slot r{slot}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for KernelProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "inputs: {}", self.inputs.join(", "))?;
        for (pc, i) in self.instructions.iter().enumerate() {
            writeln!(f, "{pc:5}: {i}")?;
        }
        for (l, s) in &self.outputs {
            writeln!(f, "output {l} = r{s}")?;
        }
        Ok(())
    }
}
