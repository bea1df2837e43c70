//! Command-line front-end. Placeholder while subsystems land.

pub fn run<I: Iterator<Item = String>>(_args: I) -> i32 {
    eprintln!("not yet wired");
    1
}
