//! Kernel shape parsing for the command line and config files.
//!
//! Shapes are written `N` (vectors), `HxW` (matrices), and for windowed
//! kernels `HxW:KHxKW[:STRIDE]`, e.g. `28x28:3x3:1`.

use ebf_kernels::{KernelError, KernelKind, KernelSpec};

pub fn parse_kernel_spec(
    name: &str,
    shape: &str,
    reps: u32,
    seed: u64,
) -> Result<KernelSpec, KernelError> {
    let kind: KernelKind = name.parse()?;
    let bad = |reason: String| KernelError::ShapeMismatch {
        kernel: kind.name(),
        reason,
    };
    let mut sections = shape.split(':');
    let dims_part = sections.next().unwrap_or_default();
    let dims: Vec<usize> = dims_part
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| bad(format!("bad dimensions '{dims_part}': {e}")))?;

    let mut spec = KernelSpec::new(kind, dims);
    spec.reps = reps;
    spec.seed = seed;
    if let Some(window_part) = sections.next() {
        let parts: Vec<usize> = window_part
            .split('x')
            .map(|d| d.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("bad window '{window_part}': {e}")))?;
        spec.window = match parts[..] {
            [k] => Some((k, k)),
            [kh, kw] => Some((kh, kw)),
            _ => return Err(bad(format!("bad window '{window_part}'"))),
        };
    }
    if let Some(stride_part) = sections.next() {
        spec.stride = stride_part
            .trim()
            .parse()
            .map_err(|e| bad(format!("bad stride '{stride_part}': {e}")))?;
    }
    if sections.next().is_some() {
        return Err(bad(format!("too many ':' sections in '{shape}'")));
    }
    // Windowed kernels default to a 2x2 window if none was given.
    if spec.window.is_none()
        && matches!(
            kind,
            KernelKind::Convolution | KernelKind::MaxPooling | KernelKind::AvgPooling
        )
    {
        spec.window = Some((2, 2));
    }
    spec.validate()?;
    Ok(spec)
}
