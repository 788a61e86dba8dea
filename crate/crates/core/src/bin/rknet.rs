use clap::Parser;

fn main() {
    std::process::exit(rknet::cli::execute(rknet::cli::Cli::parse()));
}
