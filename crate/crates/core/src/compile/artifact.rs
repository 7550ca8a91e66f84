//! Binary kernel artifacts.
//!
//! ```text
//! "HADK" version:u8
//! inputs:  count:u32 (len:u32 utf8)*
//! outputs: count:u32 (len:u32 utf8 slot:u32)*
//! slot_count:u32
//! code:    count:u32 (opcode:u8 dest:u32 (a:u32 b:u32 | value:f64) guard:u8 [lhs:u32 rel:u8 rhs:u32])*
//! ```
//!
//! All integers and floats are little-endian.

use crate::expr::{BinaryOp, Relation, UnaryOp};

use super::kernel::{Guard, Instr, KernelError, KernelProgram};

pub const MAGIC: &[u8; 4] = b"HADK";
pub const FORMAT_VERSION: u8 = 1;

const OP_INPUT: u8 = 0;
const OP_CONST: u8 = 1;
const OP_UNARY: u8 = 2;
const OP_BINARY: u8 = 9;
const OP_BRANCH_FALSE: u8 = 16;
const OP_BRANCH_TRUE: u8 = 17;
const OP_JUMP: u8 = 18;
const OP_SELECT: u8 = 19;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn rel_code(r: Relation) -> u8 {
    match r {
        Relation::Lt => 0,
        Relation::Le => 1,
    }
}

impl KernelProgram {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.instructions.len() * 14);
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        put_u32(&mut out, self.inputs.len() as u32);
        for name in &self.inputs {
            put_str(&mut out, name);
        }
        put_u32(&mut out, self.outputs.len() as u32);
        for (name, slot) in &self.outputs {
            put_str(&mut out, name);
            put_u32(&mut out, *slot);
        }
        put_u32(&mut out, self.slot_count);
        put_u32(&mut out, self.instructions.len() as u32);
        for ins in &self.instructions {
            let (code, dest, a, b, guard) = match *ins {
                Instr::Input { dest, index } => (OP_INPUT, dest, index, 0, None),
                Instr::Const { dest, value } => {
                    out.push(OP_CONST);
                    put_u32(&mut out, dest);
                    out.extend_from_slice(&value.to_le_bytes());
                    out.push(0);
                    continue;
                }
                Instr::Unary { dest, op, arg } => {
                    let k = UnaryOp::ALL.iter().position(|o| *o == op).expect("listed op") as u8;
                    (OP_UNARY + k, dest, arg, 0, None)
                }
                Instr::Binary { dest, op, lhs, rhs } => {
                    let k = BinaryOp::ALL.iter().position(|o| *o == op).expect("listed op") as u8;
                    (OP_BINARY + k, dest, lhs, rhs, None)
                }
                Instr::Branch { guard, when, target } => {
                    (if when { OP_BRANCH_TRUE } else { OP_BRANCH_FALSE }, 0, target, 0, Some(guard))
                }
                Instr::Jump { target } => (OP_JUMP, 0, target, 0, None),
                Instr::Select { dest, guard, then, otherwise } => (OP_SELECT, dest, then, otherwise, Some(guard)),
            };
            out.push(code);
            put_u32(&mut out, dest);
            put_u32(&mut out, a);
            put_u32(&mut out, b);
            match guard {
                None => out.push(0),
                Some(g) => {
                    out.push(1);
                    put_u32(&mut out, g.lhs);
                    out.push(rel_code(g.rel));
                    put_u32(&mut out, g.rhs);
                }
            }
        }
        out
    }

    /// Decodes and validates an artifact.
    pub fn from_bytes(bytes: &[u8]) -> Result<KernelProgram, KernelError> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(KernelError::BadMagic);
        }
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(KernelError::Version(version));
        }
        let n_in = r.u32()? as usize;
        let mut inputs = Vec::with_capacity(n_in.min(1 << 16));
        for _ in 0..n_in {
            inputs.push(r.string()?);
        }
        let n_out = r.u32()? as usize;
        let mut outputs = Vec::with_capacity(n_out.min(1 << 16));
        for _ in 0..n_out {
            let name = r.string()?;
            outputs.push((name, r.u32()?));
        }
        let slot_count = r.u32()?;
        let n_code = r.u32()? as usize;
        let mut instructions = Vec::with_capacity(n_code.min(1 << 20));
        for _ in 0..n_code {
            let code = r.u8()?;
            let dest = r.u32()?;
            if code == OP_CONST {
                let value = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                if r.u8()? != 0 {
                    return Err(KernelError::Opcode(code));
                }
                instructions.push(Instr::Const { dest, value });
                continue;
            }
            let a = r.u32()?;
            let b = r.u32()?;
            let guard = match r.u8()? {
                0 => None,
                1 => {
                    let lhs = r.u32()?;
                    let rel = match r.u8()? {
                        0 => Relation::Lt,
                        1 => Relation::Le,
                        other => return Err(KernelError::Relation(other)),
                    };
                    Some(Guard { lhs, rel, rhs: r.u32()? })
                }
                _ => return Err(KernelError::Opcode(code)),
            };
            let ins = match (code, guard) {
                (OP_INPUT, None) => Instr::Input { dest, index: a },
                (c, None) if (OP_UNARY..OP_BINARY).contains(&c) => {
                    Instr::Unary { dest, op: UnaryOp::ALL[(c - OP_UNARY) as usize], arg: a }
                }
                (c, None) if (OP_BINARY..OP_BRANCH_FALSE).contains(&c) => {
                    Instr::Binary { dest, op: BinaryOp::ALL[(c - OP_BINARY) as usize], lhs: a, rhs: b }
                }
                (OP_BRANCH_FALSE, Some(guard)) => Instr::Branch { guard, when: false, target: a },
                (OP_BRANCH_TRUE, Some(guard)) => Instr::Branch { guard, when: true, target: a },
                (OP_JUMP, None) => Instr::Jump { target: a },
                (OP_SELECT, Some(guard)) => Instr::Select { dest, guard, then: a, otherwise: b },
                (c, _) => return Err(KernelError::Opcode(c)),
            };
            instructions.push(ins);
        }
        if r.at != bytes.len() {
            return Err(KernelError::Trailing);
        }
        let k = KernelProgram { inputs, outputs, slot_count, instructions };
        k.validate()?;
        Ok(k)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], KernelError> {
        let end = self.at.checked_add(n).ok_or(KernelError::Truncated)?;
        let s = self.bytes.get(self.at..end).ok_or(KernelError::Truncated)?;
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, KernelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, KernelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String, KernelError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| KernelError::Utf8)
    }
}
